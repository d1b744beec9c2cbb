//! Pure tensor kernels.
//!
//! The `Tensor` functions validate shapes and delegate to slice kernels that
//! the autograd tape reuses. Every sum runs left to right over its index.

use crate::error::{NumericsError, Result};
use crate::tensor::Tensor;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(NumericsError::Shape(format!("{what} must be a matrix, got shape {s:?}"))),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "left operand")?;
    let (k2, n) = as_matrix(b, "right operand")?;
    if k != k2 {
        return Err(NumericsError::Shape(format!(
            "matmul inner dimensions disagree: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(vec![m, n], matmul_kernel(a.data(), b.data(), m, k, n))
}

/// `a[m×k] · b[k×n]`.
pub fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` for `a[m×k]`, `b[m×n]`, giving `[k×n]`.
pub fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` for `a[m×k]`, `b[n×k]`, giving `[m×n]`.
pub fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    matmul_kernel(a, &transpose(b, n, k), m, k, n)
}

pub fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(NumericsError::Shape(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let dim = shape[axis];
    if dim == 0 {
        return Err(NumericsError::Shape("softmax over an empty axis".into()));
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    let mut lane = vec![0.0; dim];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * dim * inner + i;
            for (d, v) in lane.iter_mut().enumerate() {
                *v = src[base + d * inner];
            }
            softmax_in_place(&mut lane);
            for (d, v) in lane.iter().enumerate() {
                out[base + d * inner] = *v;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Max-subtracted softmax of one slice.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &x in row {
        sum += (x - max).exp();
    }
    let log_z = max + sum.ln();
    row.iter().map(|&x| x - log_z).collect()
}

/// Statistics kept from a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let cols = *x
        .shape()
        .last()
        .ok_or_else(|| NumericsError::Shape("layer norm of a scalar".into()))?;
    if cols == 0 {
        return Err(NumericsError::Shape("layer norm over an empty last axis".into()));
    }
    if gain.numel() != cols || bias.numel() != cols {
        return Err(NumericsError::Shape(format!(
            "layer norm gain/bias of length {}/{} for last axis {cols}",
            gain.numel(),
            bias.numel()
        )));
    }
    if eps <= 0.0 {
        return Err(NumericsError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (out, _) = layer_norm_kernel(x.data(), gain.data(), bias.data(), cols, eps);
    Tensor::new(x.shape().to_vec(), out)
}

pub fn layer_norm_kernel(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    cols: usize,
    eps: f64,
) -> (Vec<f64>, NormStats) {
    let rows = x.len() / cols;
    let mut out = vec![0.0; x.len()];
    let mut stats = NormStats {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    let n = cols as f64;
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for &v in row {
            sum += v;
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for &v in row {
            let d = v - mean;
            sq += d * d;
        }
        let rstd = 1.0 / (sq / n + eps).sqrt();
        let dst = &mut out[r * cols..(r + 1) * cols];
        for c in 0..cols {
            dst[c] = (row[c] - mean) * rstd * gain[c] + bias[c];
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    (out, stats)
}

/// Standard normal CDF via `erf`.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Mean negative log-likelihood over the positions selected by `mask`.
///
/// Targets at unselected positions are never read.
pub fn masked_cross_entropy(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<f64> {
    let (rows, vocab) = as_matrix(logits, "logits")?;
    if targets.len() != rows || mask.len() != rows {
        return Err(NumericsError::Shape(format!(
            "logits have {rows} rows but {} targets and {} mask entries were given",
            targets.len(),
            mask.len()
        )));
    }
    let (sum, count) = masked_nll_sum(logits.data(), vocab, targets, mask)?;
    if count == 0 {
        return Err(NumericsError::EmptyLoss);
    }
    Ok(sum / count as f64)
}

/// Sum of `-log softmax(row)[target]` over masked rows, plus the row count.
pub fn masked_nll_sum(
    logits: &[f64],
    vocab: usize,
    targets: &[usize],
    mask: &[bool],
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut count = 0;
    for (t, &on) in mask.iter().enumerate() {
        if !on {
            continue;
        }
        let target = targets[t];
        if target >= vocab {
            return Err(NumericsError::TargetOutOfRange {
                position: t,
                target,
                vocab,
            });
        }
        let row = &logits[t * vocab..(t + 1) * vocab];
        sum -= log_softmax(row)[target];
        count += 1;
    }
    Ok((sum, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let zero = Tensor::zeros(vec![2, 3]);
        assert!(matmul(&a, &zero).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(vec![3, 4], 1);
        let b = random(vec![4, 2], 2);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                assert!((c.get(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = random(vec![5, 3], 3);
        let b = random(vec![5, 4], 4);
        let at = Tensor::new(vec![3, 5], transpose(a.data(), 5, 3)).unwrap();
        let expect = matmul(&at, &b).unwrap();
        let got = matmul_at_b(a.data(), b.data(), 5, 3, 4);
        assert_eq!(expect.data(), got.as_slice());

        let c = random(vec![2, 3], 5);
        let ct = Tensor::new(vec![3, 2], transpose(c.data(), 2, 3)).unwrap();
        let expect = matmul(&a, &ct).unwrap();
        assert_eq!(expect.data(), matmul_a_bt(a.data(), c.data(), 5, 3, 2).as_slice());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] · [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_basics() {
        let x = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax(&x, 0).unwrap().data(), &[0.5, 0.5]);

        let x = random(vec![3, 5], 9);
        let shifted = Tensor::new(vec![3, 5], x.data().iter().map(|v| v + 17.25).collect()).unwrap();
        let a = softmax(&x, 1).unwrap();
        let b = softmax(&shifted, 1).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);

        assert!(softmax(&Tensor::zeros(vec![2, 0]), 1).is_err());
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn softmax_matches_extended_precision() {
        // 30-digit evaluation of e^i / (e + e^2 + e^3).
        let reference = [
            0.090_030_573_170_380_457_998,
            0.244_728_471_054_797_652_473,
            0.665_240_955_774_821_889_529,
        ];
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        for (a, b) in y.data().iter().zip(reference) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_along_leading_axis() {
        let x = random(vec![4, 3], 11);
        let y = softmax(&x, 0).unwrap();
        for c in 0..3 {
            let s: f64 = (0..4).map(|r| y.get(&[r, c])).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_on_wide_inputs(xs in proptest::collection::vec(-1e4f64..1e4, 1..64)) {
            let n = xs.len();
            let y = softmax(&Tensor::new(vec![n], xs).unwrap(), 0).unwrap();
            let s: f64 = y.data().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(y.data().iter().all(|&p| p >= 0.0 && p.is_finite()));
        }
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        let zeros = Tensor::zeros(vec![4]);
        let c = Tensor::new(vec![4], vec![3.5; 4]).unwrap();
        let y = layer_norm(&c, &ones, &zeros, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x = Tensor::new(vec![2], vec![-1.0, 1.0]).unwrap();
        let y = layer_norm(&x, &Tensor::new(vec![2], vec![1.0; 2]).unwrap(), &Tensor::zeros(vec![2]), 1e-12)
            .unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);

        let x = random(vec![1, 33], 5);
        let g = Tensor::new(vec![33], vec![1.0; 33]).unwrap();
        let y = layer_norm(&x, &g, &Tensor::zeros(vec![33]), 1e-12).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 33.0;
        let var: f64 = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 33.0;
        assert!(mean.abs() <= 1e-7);
        assert!((var - 1.0).abs() < 1e-5);

        assert!(layer_norm(&Tensor::zeros(vec![2, 0]), &Tensor::zeros(vec![0]), &Tensor::zeros(vec![0]), 1e-5).is_err());
    }

    /// Maclaurin series for erf; converges quickly for |x| ≲ 3.
    fn erf_series(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = x; // (-1)^n x^(2n+1) / n!
        for n in 0..60 {
            sum += term / (2 * n + 1) as f64;
            term *= -x * x / (n + 1) as f64;
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        let oracle = 0.5 * (1.0 + erf_series(1.0 / SQRT_2));
        assert!((gelu_scalar(1.0) - oracle).abs() < 1e-9);
        for &x in &[-2.5, -0.3, 0.7, 1.9] {
            let fd = (gelu_scalar(x + 1e-6) - gelu_scalar(x - 1e-6)) / 2e-6;
            assert!((gelu_grad_scalar(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_vocab() {
        let logits = Tensor::zeros(vec![3, 7]);
        let loss = masked_cross_entropy(&logits, &[0, 3, 6], &[true; 3]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_ignores_masked_targets() {
        let logits = random(vec![4, 5], 8);
        let mask = [true, false, true, false];
        let a = masked_cross_entropy(&logits, &[1, 2, 3, 4], &mask).unwrap();
        let b = masked_cross_entropy(&logits, &[1, 999, 3, usize::MAX], &mask).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cross_entropy_hand_computed() {
        let logits = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p0 = 2f64.exp() / (2f64.exp() + 1.0);
        let p1 = 1f64.exp() / (1.0 + 1f64.exp());
        let expect = (-p0.ln() - p1.ln()) / 2.0;
        let got = masked_cross_entropy(&logits, &[0, 1], &[true, true]).unwrap();
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_errors() {
        let logits = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            masked_cross_entropy(&logits, &[0, 0], &[false, false]),
            Err(NumericsError::EmptyLoss)
        ));
        assert!(matches!(
            masked_cross_entropy(&logits, &[0, 3], &[true, true]),
            Err(NumericsError::TargetOutOfRange { position: 1, .. })
        ));
    }
}
