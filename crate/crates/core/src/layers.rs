//! Parameter bundles shared by the vision tower and the decoder.

use mmlm_numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Dropout switch threaded through forward passes.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    /// Inverted-dropout keep mask of `n` entries, or `None` when dropout is
    /// off.
    pub fn keep_mask(&mut self, n: usize, p: f64) -> Option<Vec<f64>> {
        match self {
            Mode::Train(rng) if p > 0.0 => {
                let scale = 1.0 / (1.0 - p);
                Some((0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { scale }).collect())
            }
            _ => None,
        }
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Result<Var> {
        let (r, c) = tape.dims(x);
        Ok(match self.keep_mask(r * c, p) {
            Some(keep) => tape.dropout(x, keep)?,
            None => x,
        })
    }
}

pub fn normal_tensor(shape: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Xavier-normal standard deviation for an `fan_in × fan_out` matrix.
pub fn xavier_std(fan_in: usize, fan_out: usize, gain: f64) -> f64 {
    gain * (2.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            normal_tensor(vec![fan_in, fan_out], xavier_std(fan_in, fan_out, gain), rng),
            true,
        );
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out]), false));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        Ok(tape.linear(x, w, b)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let ones = Tensor::new(vec![width], vec![1.0; width]).expect("vector");
        Self {
            gain: store.add(format!("{name}.gain"), ones, false),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![width]), false),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        Ok(tape.layer_norm(x, g, b, LN_EPS)?)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

/// Deterministic per-purpose generator.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_mode_never_drops() {
        assert!(Mode::Eval.keep_mask(10, 0.5).is_none());
        let mut rng = seeded(1, 0);
        assert!(Mode::Train(&mut rng).keep_mask(10, 0.0).is_none());
    }

    #[test]
    fn train_mask_values() {
        let mut rng = seeded(1, 0);
        let keep = Mode::Train(&mut rng).keep_mask(10_000, 0.25).unwrap();
        let dropped = keep.iter().filter(|&&k| k == 0.0).count();
        assert!(keep.iter().all(|&k| k == 0.0 || (k - 4.0 / 3.0).abs() < 1e-15));
        assert!((2300..2700).contains(&dropped), "{dropped}");
    }

    #[test]
    fn xavier_matches_formula() {
        assert!((xavier_std(64, 256, 1.0) - (2.0f64 / 320.0).sqrt()).abs() < 1e-15);
    }
}
