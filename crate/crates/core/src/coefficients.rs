//! Drift and diffusion coefficients of the forward equation.
//!
//! Presets carry their own Lipschitz and growth constants. The constants are
//! declarations; [`CoefficientField::audit`] spot-checks them on random probe
//! pairs when a model is assembled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::spectral::{norm_h, BWeight};

/// Number of random pairs used by the Lipschitz audit.
pub const AUDIT_PAIRS: usize = 100;
/// Multiplicative slack allowed over a declared constant.
pub const AUDIT_SLACK: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Zero,
    /// `b_k(x) = beta * sin(x_k)`.
    NemytskiiSine {
        beta: f64,
    },
    /// `b_k(x) = kappa * x_k + shift`.
    Affine {
        kappa: f64,
        shift: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diffusion {
    Zero,
    /// `sigma = q * I` on the first `min(d, d_xi)` modes.
    Constant {
        q: f64,
    },
    /// Diagonal `sigma_kk(x) = q + gamma * sqrt(b_k) * sin(x_k)` on the first
    /// `min(d, d_xi)` modes. Lipschitz with constant `gamma` from the
    /// `H_{-1}` quadratic form into Hilbert-Schmidt operators.
    Multiplicative {
        q: f64,
        gamma: f64,
        sqrt_weights: Vec<f64>,
    },
}

impl Diffusion {
    pub fn multiplicative(q: f64, gamma: f64, bweight: &BWeight) -> Self {
        Diffusion::Multiplicative {
            q,
            gamma,
            sqrt_weights: bweight.weights().iter().map(|b| b.sqrt()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub drift: Drift,
    pub diffusion: Diffusion,
}

impl CoefficientField {
    pub fn zero() -> Self {
        Self {
            drift: Drift::Zero,
            diffusion: Diffusion::Zero,
        }
    }

    pub fn constant_sigma(q: f64) -> Self {
        Self {
            drift: Drift::Zero,
            diffusion: Diffusion::Constant { q },
        }
    }

    pub fn nemytskii_sine(beta: f64, q: f64) -> Self {
        Self {
            drift: Drift::NemytskiiSine { beta },
            diffusion: Diffusion::Constant { q },
        }
    }

    pub fn affine(kappa: f64, shift: f64, q: f64) -> Self {
        Self {
            drift: Drift::Affine { kappa, shift },
            diffusion: Diffusion::Constant { q },
        }
    }

    pub fn drift_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match self.drift {
            Drift::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Drift::NemytskiiSine { beta } => {
                for (o, xk) in out.iter_mut().zip(x) {
                    *o = beta * xk.sin();
                }
            }
            Drift::Affine { kappa, shift } => {
                for (o, xk) in out.iter_mut().zip(x) {
                    *o = kappa * xk + shift;
                }
            }
        }
    }

    /// `out += sigma(t, x) dw`.
    pub fn add_diffusion(&self, _t: f64, x: &[f64], dw: &[f64], out: &mut [f64]) {
        let shared = out.len().min(dw.len());
        match &self.diffusion {
            Diffusion::Zero => {}
            Diffusion::Constant { q } => {
                for k in 0..shared {
                    out[k] += q * dw[k];
                }
            }
            Diffusion::Multiplicative {
                q,
                gamma,
                sqrt_weights,
            } => {
                for k in 0..shared {
                    out[k] += (q + gamma * sqrt_weights[k] * x[k].sin()) * dw[k];
                }
            }
        }
    }

    /// Row-major `d x d_xi` matrix of `sigma(t, x)`.
    pub fn diffusion_matrix(&self, t: f64, x: &[f64], d_xi: usize) -> Vec<f64> {
        let d = x.len();
        let mut m = vec![0.0; d * d_xi];
        let mut col = vec![0.0; d];
        let mut e = vec![0.0; d_xi];
        for j in 0..d_xi {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            col.iter_mut().for_each(|v| *v = 0.0);
            self.add_diffusion(t, x, &e, &mut col);
            for k in 0..d {
                m[k * d_xi + j] = col[k];
            }
        }
        m
    }

    pub fn is_noise_free(&self) -> bool {
        match &self.diffusion {
            Diffusion::Zero => true,
            Diffusion::Constant { q } => *q == 0.0,
            Diffusion::Multiplicative { q, gamma, .. } => *q == 0.0 && *gamma == 0.0,
        }
    }

    /// Drift and diffusion do not depend on the state.
    pub fn is_state_independent(&self) -> bool {
        let drift = match self.drift {
            Drift::Zero => true,
            Drift::NemytskiiSine { beta } => beta == 0.0,
            Drift::Affine { kappa, .. } => kappa == 0.0,
        };
        let diffusion = match &self.diffusion {
            Diffusion::Multiplicative { gamma, .. } => *gamma == 0.0,
            _ => true,
        };
        drift && diffusion
    }

    /// Declared Lipschitz constant of the drift in `H`.
    pub fn lip_drift(&self) -> f64 {
        match self.drift {
            Drift::Zero => 0.0,
            Drift::NemytskiiSine { beta } => beta.abs(),
            Drift::Affine { kappa, .. } => kappa.abs(),
        }
    }

    /// Declared Lipschitz constant of the diffusion from the `H_{-1}` norm
    /// (square root of the quadratic form) into Hilbert-Schmidt norm.
    pub fn lip_diffusion(&self) -> f64 {
        match &self.diffusion {
            Diffusion::Multiplicative { gamma, .. } => gamma.abs(),
            _ => 0.0,
        }
    }

    /// Constant `C` with `|b(x)| <= C(1 + |x|)` and `|sigma(x)|_HS <= C(1 + |x|)`.
    pub fn growth_constant(&self, d: usize, d_xi: usize) -> f64 {
        let shared = d.min(d_xi) as f64;
        let drift = match self.drift {
            Drift::Zero => 0.0,
            Drift::NemytskiiSine { beta } => beta.abs(),
            Drift::Affine { kappa, shift } => kappa.abs().max(shift.abs() * (d as f64).sqrt()),
        };
        let diffusion = match &self.diffusion {
            Diffusion::Zero => 0.0,
            Diffusion::Constant { q } => q.abs() * shared.sqrt(),
            Diffusion::Multiplicative {
                q,
                gamma,
                sqrt_weights,
            } => {
                let smax = sqrt_weights.iter().cloned().fold(0.0, f64::max);
                (q.abs() + gamma.abs() * smax) * shared.sqrt()
            }
        };
        drift.max(diffusion)
    }

    /// Spot-checks the declared constants on [`AUDIT_PAIRS`] random pairs.
    pub fn audit(&self, d: usize, d_xi: usize, bweight: &BWeight, seed: u64) -> Result<()> {
        if let Diffusion::Multiplicative { sqrt_weights, .. } = &self.diffusion {
            if sqrt_weights.len() < d.min(d_xi) {
                return Err(FkError::DimensionMismatch {
                    context: "multiplicative diffusion weights",
                    expected: d.min(d_xi),
                    got: sqrt_weights.len(),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lip_b = self.lip_drift();
        let lip_s = self.lip_diffusion();
        let growth = self.growth_constant(d, d_xi);
        let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
        let mut worst_b: f64 = 0.0;
        let mut worst_s: f64 = 0.0;
        let mut worst_g: f64 = 0.0;
        for i in 0..AUDIT_PAIRS {
            let scale = 10f64.powf(-2.0 + 4.0 * i as f64 / AUDIT_PAIRS as f64);
            let x: Vec<f64> = (0..d)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y: Vec<f64> = x
                .iter()
                .map(|v| v + scale * 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let dist = norm_h(&dx);
            let dist_hm1 = bweight.norm_hm1_sq_slice(&dx).sqrt();

            self.drift_into(0.0, &x, &mut bx);
            self.drift_into(0.0, &y, &mut by);
            let db: Vec<f64> = bx.iter().zip(&by).map(|(a, b)| a - b).collect();
            if dist > 0.0 {
                worst_b = worst_b.max(norm_h(&db) / dist);
            }
            let sx = self.diffusion_matrix(0.0, &x, d_xi);
            let sy = self.diffusion_matrix(0.0, &y, d_xi);
            let ds: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
            if dist_hm1 > 0.0 {
                worst_s = worst_s.max(norm_h(&ds) / dist_hm1);
            }
            let g = (norm_h(&bx).max(norm_h(&sx))) / (1.0 + norm_h(&x));
            worst_g = worst_g.max(g);
        }
        let tol = 1e-12;
        if worst_b > lip_b * AUDIT_SLACK + tol {
            return Err(FkError::LipschitzAudit {
                what: "drift",
                observed: worst_b,
                declared: lip_b,
            });
        }
        if worst_s > lip_s * AUDIT_SLACK + tol {
            return Err(FkError::LipschitzAudit {
                what: "diffusion",
                observed: worst_s,
                declared: lip_s,
            });
        }
        if worst_g > growth * AUDIT_SLACK + tol {
            return Err(FkError::LipschitzAudit {
                what: "linear growth",
                observed: worst_g,
                declared: growth,
            });
        }
        Ok(())
    }
}
