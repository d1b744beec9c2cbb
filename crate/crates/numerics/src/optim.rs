//! AdamW with decoupled weight decay and bias correction.

use crate::autograd::{Gradients, ParamStore};
use crate::error::{NumericsError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

/// First/second moments for every parameter of a store, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = || -> Vec<Vec<f64>> { store.entries().iter().map(|e| vec![0.0; e.tensor.numel()]).collect() };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Applies one update with learning rate `lr` to every trainable
    /// parameter. Parameters without a gradient are treated as having a zero
    /// gradient. Fails before touching anything if a gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(NumericsError::InvalidArgument(format!("learning rate {lr} is negative")));
        }
        if self.m.len() != store.len() {
            return Err(NumericsError::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (id, g) in grads.iter() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NumericsError::NonFiniteGradient(store.name(id).to_string()));
            }
            if g.len() != store.get(id).numel() {
                return Err(NumericsError::Shape(format!("gradient size mismatch for `{}`", store.name(id))));
            }
        }
        self.t += 1;
        let cfg = self.config;
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let decay = if store.entry(id).decay { cfg.weight_decay } else { 0.0 };
            let p = store.get_mut(id).data_mut();
            adamw_update(p, grads.get(id), &mut self.m[id.0], &mut self.v[id.0], self.t, &cfg, decay, lr);
        }
        Ok(())
    }
}

/// One AdamW update of a flat buffer. `t` is the 1-based step number.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    p: &mut [f64],
    g: Option<&[f64]>,
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamWConfig,
    weight_decay: f64,
    lr: f64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..p.len() {
        let gi = g.map_or(0.0, |g| g[i]);
        p[i] -= lr * weight_decay * p[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(values: Vec<f64>, decay: bool) -> ParamStore {
        let mut s = ParamStore::new();
        let n = values.len();
        s.add("p", Tensor::new(vec![n], values).unwrap(), decay);
        s
    }

    fn grads(values: Vec<f64>) -> Gradients {
        let mut g = Gradients::new(1);
        g.accumulate_into(crate::ParamId(0), &values);
        g
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store_with(vec![0.5, -1.5], true);
        let before = s.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimizerState::new(&s, cfg);
        st.step(&mut s, &grads(vec![0.0, 0.0]), 0.1).unwrap();
        assert_eq!(s, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_matches_scalar_recurrence() {
        let mut s = store_with(vec![0.0], true);
        let cfg = AdamWConfig::default();
        let mut st = OptimizerState::new(&s, cfg);
        st.step(&mut s, &grads(vec![1.0]), 0.1).unwrap();
        // Scalar recurrence written out for p=0, g=1, t=1.
        let m = (1.0 - 0.9) * 1.0;
        let v = (1.0 - 0.98) * 1.0;
        let m_hat = m / (1.0 - 0.9);
        let v_hat = v / (1.0 - 0.98);
        let expect = 0.0 - 0.1 * m_hat / (f64::sqrt(v_hat) + 1e-6);
        assert!((s.get(crate::ParamId(0)).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn decoupled_decay_alone_shrinks_by_lr_wd_p() {
        let p0 = 2.0;
        let mut s = store_with(vec![p0], true);
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut st = OptimizerState::new(&s, cfg);
        st.step(&mut s, &grads(vec![0.0]), 0.5).unwrap();
        assert_eq!(s.get(crate::ParamId(0)).data()[0], p0 - 0.5 * 0.01 * p0);
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        let mut s = store_with(vec![0.3, -0.7], true);
        let before = s.clone();
        let mut st = OptimizerState::new(&s, AdamWConfig::default());
        for _ in 0..5 {
            st.step(&mut s, &grads(vec![0.4, -2.0]), 0.0).unwrap();
        }
        assert_eq!(s, before);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store_with(vec![0.0], true);
        let mut st = OptimizerState::new(&s, AdamWConfig::default());
        let err = st.step(&mut s, &grads(vec![f64::NAN]), 0.1).unwrap_err();
        assert!(err.to_string().contains("`p`"));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn frozen_parameters_are_not_updated() {
        let mut s = store_with(vec![1.0], true);
        s.set_trainable(crate::ParamId(0), false);
        let mut st = OptimizerState::new(&s, AdamWConfig::default());
        st.step(&mut s, &Gradients::new(1), 0.1).unwrap();
        assert_eq!(s.get(crate::ParamId(0)).data()[0], 1.0);
    }
}
