//! xPos: rotary position rotation with a symmetric exponential scale.
//!
//! For head-dim pair `i` of `d`, the rotation frequency is
//! `θ_i = theta^(−2i/d)` and the decay base is `ζ_i = (2i/d + γ)/(1 + γ)`.
//! A query at position `n` is rotated by `n·θ_i` and scaled by
//! `ζ_i^(n/B)`; a key at `m` is rotated by `m·θ_i` and scaled by
//! `ζ_i^(−m/B)`. Their dot product then depends on `n − m` only and carries
//! a factor `ζ_i^((n−m)/B)`.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XPosConfig {
    pub gamma: f64,
    /// `B` above.
    pub scale_base: f64,
    pub theta: f64,
}

impl Default for XPosConfig {
    fn default() -> Self {
        Self {
            gamma: 0.4,
            scale_base: 512.0,
            theta: 10_000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Query,
    Key,
}

impl XPosConfig {
    pub fn frequency(&self, pair: usize, head_dim: usize) -> f64 {
        self.theta.powf(-2.0 * pair as f64 / head_dim as f64)
    }

    pub fn zeta(&self, pair: usize, head_dim: usize) -> f64 {
        (2.0 * pair as f64 / head_dim as f64 + self.gamma) / (1.0 + self.gamma)
    }

    /// `[cos, sin, scale]` for every pair of one head vector at `pos`.
    pub fn pair_coefficients(&self, pos: usize, role: Role, head_dim: usize) -> Vec<[f64; 3]> {
        assert!(head_dim % 2 == 0, "xPos needs an even head dimension, got {head_dim}");
        let sign = match role {
            Role::Query => 1.0,
            Role::Key => -1.0,
        };
        (0..head_dim / 2)
            .map(|i| {
                let angle = pos as f64 * self.frequency(i, head_dim);
                let scale = self.zeta(i, head_dim).powf(sign * pos as f64 / self.scale_base);
                [angle.cos(), angle.sin(), scale]
            })
            .collect()
    }

    /// Coefficients for a `rows × (heads·head_dim)` matrix whose row `t`
    /// sits at position `start + t`, laid out as the tape's pair rotation
    /// expects.
    pub fn matrix_coefficients(&self, start: usize, rows: usize, heads: usize, head_dim: usize, role: Role) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(rows * heads * head_dim / 2);
        for t in 0..rows {
            let per_head = self.pair_coefficients(start + t, role, head_dim);
            for _ in 0..heads {
                out.extend_from_slice(&per_head);
            }
        }
        out
    }

    /// Transforms one head vector.
    pub fn apply(&self, v: &[f64], pos: usize, role: Role) -> Vec<f64> {
        let coeffs = self.pair_coefficients(pos, role, v.len());
        let mut out = vec![0.0; v.len()];
        for (p, [c, s, k]) in coeffs.into_iter().enumerate() {
            let (a, b) = (v[2 * p], v[2 * p + 1]);
            out[2 * p] = k * (a * c - b * s);
            out[2 * p + 1] = k * (a * s + b * c);
        }
        out
    }

    /// Upper bound on `|q_n · k_m|` for `n − m = offset`, from per-pair
    /// norms: `Σ_i |q_i||k_i| ζ_i^(offset/B)`.
    pub fn envelope(&self, q: &[f64], k: &[f64], offset: usize) -> f64 {
        let d = q.len();
        (0..d / 2)
            .map(|i| {
                let qn = q[2 * i].hypot(q[2 * i + 1]);
                let kn = k[2 * i].hypot(k[2 * i + 1]);
                qn * kn * self.zeta(i, d).powf(offset as f64 / self.scale_base)
            })
            .sum()
    }
}
