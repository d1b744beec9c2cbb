//! Central finite-difference gradient checking.

use crate::autograd::{Gradients, ParamStore};
use crate::error::{NumericsError, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates probed per parameter; larger parameters are sampled.
    pub max_coords: usize,
    /// Denominator floor for the relative error.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            tol: 1e-4,
            max_coords: 8,
            abs_floor: 1e-6,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    /// Worst relative error over probed coordinates and the random direction.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn baseline<F: FnMut() -> f64>(mut f: F) -> Result<f64> {
    let first = f();
    let second = f();
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::NonDeterministic { first, second });
    }
    Ok(first)
}

/// Checks every coordinate of a flat parameter vector. Each coordinate is
/// reported as its own entry `p[i]`.
pub fn check_vector<F>(mut f: F, params: &[f64], analytic: &[f64], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if eps <= 0.0 {
        return Err(NumericsError::InvalidArgument("eps must be positive".into()));
    }
    if analytic.len() != params.len() {
        return Err(NumericsError::Shape("analytic gradient length differs from parameters".into()));
    }
    let mut p = params.to_vec();
    baseline(|| f(&p))?;
    let floor = GradCheckOptions::default().abs_floor;
    let mut report = GradCheckReport::default();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let plus = f(&p);
        p[i] = orig - eps;
        let minus = f(&p);
        p[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric, floor);
        report.params.push(ParamCheck {
            name: format!("p[{i}]"),
            coords_checked: 1,
            max_rel_error: err,
            passed: err < tol,
        });
    }
    Ok(report)
}

/// SplitMix64; sampling here must not depend on any external RNG crate.
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Checks every trainable parameter of `store` against `analytic`.
///
/// For each parameter, up to `max_coords` coordinates are probed one at a
/// time, and one random unit direction with ±1/√n entries is probed as a
/// directional derivative, so every coordinate contributes to the check.
/// Parameters without an analytic gradient are treated as having a zero one.
pub fn check_store<F>(
    mut f: F,
    store: &mut ParamStore,
    analytic: &Gradients,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> f64,
{
    if opts.eps <= 0.0 {
        return Err(NumericsError::InvalidArgument("eps must be positive".into()));
    }
    baseline(|| f(store))?;
    let mut rng = opts.seed;
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let n = store.get(id).numel();
        let zeros;
        let grad = match analytic.get(id) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            (0..opts.max_coords).map(|_| (splitmix(&mut rng) % n as u64) as usize).collect()
        };
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + opts.eps;
            let plus = f(store);
            store.get_mut(id).data_mut()[c] = orig - opts.eps;
            let minus = f(store);
            store.get_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            worst = worst.max(relative_error(grad[c], numeric, opts.abs_floor));
        }
        if n > 1 {
            let unit = 1.0 / (n as f64).sqrt();
            let dir: Vec<f64> = (0..n)
                .map(|_| if splitmix(&mut rng) & 1 == 0 { unit } else { -unit })
                .collect();
            let orig = store.get(id).data().to_vec();
            let shifted = |sign: f64| -> Vec<f64> {
                orig.iter().zip(&dir).map(|(p, d)| p + sign * opts.eps * d).collect()
            };
            store.get_mut(id).data_mut().copy_from_slice(&shifted(1.0));
            let plus = f(store);
            store.get_mut(id).data_mut().copy_from_slice(&shifted(-1.0));
            let minus = f(store);
            store.get_mut(id).data_mut().copy_from_slice(&orig);
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let mut along = 0.0;
            for (g, d) in grad.iter().zip(&dir) {
                along += g * d;
            }
            worst = worst.max(relative_error(along, numeric, opts.abs_floor));
        }
        report.params.push(ParamCheck {
            name: store.name(id).to_string(),
            coords_checked: coords.len(),
            max_rel_error: worst,
            passed: worst < opts.tol,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::cell::Cell;

    #[test]
    fn sum_of_squares() {
        let p = [0.3, -1.2, 2.0, 0.05];
        let analytic: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let report = check_vector(|p| p.iter().map(|x| x * x).sum(), &p, &analytic, 1e-4, 1e-8).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let p = [1.0, 2.0];
        let report = check_vector(|_| 3.5, &p, &[0.0, 0.0], 1e-4, 1e-8).unwrap();
        assert!(report.passed());
        assert_eq!(report.worst(), 0.0);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let p = [1.0];
        let report = check_vector(|p| p[0] * p[0], &p, &[3.0], 1e-4, 1e-4).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn nondeterminism_is_detected() {
        let calls = Cell::new(0.0);
        let err = check_vector(
            |_| {
                calls.set(calls.get() + 1.0);
                calls.get()
            },
            &[0.0],
            &[0.0],
            1e-4,
            1e-4,
        )
        .unwrap_err();
        assert!(matches!(err, NumericsError::NonDeterministic { .. }));
    }

    #[test]
    fn store_check_samples_large_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(vec![50], (0..50).map(|i| i as f64 * 0.01).collect()).unwrap(), true);
        let mut g = Gradients::new(1);
        let analytic: Vec<f64> = store.get(id).data().iter().map(|x| 3.0 * x * x).collect();
        g.accumulate_into(id, &analytic);
        let f = |s: &ParamStore| s.get(id).data().iter().map(|x| x * x * x).sum::<f64>();
        let opts = GradCheckOptions {
            eps: 1e-5,
            ..GradCheckOptions::default()
        };
        let report = check_store(f, &mut store, &g, &opts).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.params[0].coords_checked, 8);
        // Parameters are restored exactly.
        assert_eq!(store.get(id).data()[7], 0.07);
    }
}
