//! Spectral truncation of the state space.
//!
//! Everything lives in the eigenbasis of the generator `A`, which is diagonal:
//! `A e_k = -lambda_k e_k`. The semigroup is then exact, `S(t) e_k = exp(-lambda_k t) e_k`,
//! and `B` is diagonal with weights `b_k`. Modes are numbered from 1 in reports and
//! error messages, and indexed from 0 in slices.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{check_dim, FkError, Result};

/// Relative slack used when checking `(lambda_k + c0) b_k >= 1`, so that the
/// canonical preset `b_k = 1/(1 + lambda_k)` passes despite rounding.
pub const STRONG_B_RELATIVE_SLACK: f64 = 1e-12;

/// A truncated element of `H` stored as its first `d` spectral coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralVector(Vec<f64>);

impl SpectralVector {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(FkError::InvalidInput {
                field: "spectral vector",
                reason: "dimension must be at least 1".into(),
            });
        }
        if let Some(k) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(FkError::InvalidInput {
                field: "spectral vector",
                reason: format!("coefficient {} is not finite", k + 1),
            });
        }
        Ok(Self(coeffs))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    /// `scale * e_mode`, with `mode` counted from 1.
    pub fn basis(dim: usize, mode: usize, scale: f64) -> Self {
        let mut v = vec![0.0; dim.max(1)];
        if (1..=v.len()).contains(&mode) {
            v[mode - 1] = scale;
        }
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_h(&self) -> f64 {
        norm_h(&self.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dim("vector difference", self.dim(), other.dim())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim("vector sum", self.dim(), other.dim())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|c| c * factor).collect())
    }
}

/// Euclidean norm of a coefficient slice (Parseval).
pub fn norm_h(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Diagonal dissipative generator: `A` multiplies mode `k` by `-lambda_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGenerator {
    lambdas: Vec<f64>,
}

impl DiagonalGenerator {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(FkError::InvalidInput {
                field: "generator",
                reason: "needs at least one mode".into(),
            });
        }
        for (k, &l) in lambdas.iter().enumerate() {
            if !l.is_finite() || l < 0.0 {
                return Err(FkError::InvalidInput {
                    field: "generator",
                    reason: format!("lambda_{} = {l} must be finite and nonnegative", k + 1),
                });
            }
        }
        if let Some(k) = lambdas.windows(2).position(|w| w[1] < w[0]) {
            return Err(FkError::InvalidInput {
                field: "generator",
                reason: format!("eigenvalues must be nondecreasing (mode {})", k + 2),
            });
        }
        Ok(Self { lambdas })
    }

    /// `lambda_k = pi^2 k^2`: the Dirichlet Laplacian on the unit interval.
    pub fn dirichlet_laplacian(dim: usize) -> Self {
        Self {
            lambdas: (1..=dim.max(1)).map(|k| PI * PI * (k * k) as f64).collect(),
        }
    }

    /// `lambda_k = lambda` for every mode.
    pub fn identity_decay(dim: usize, lambda: f64) -> Result<Self> {
        Self::new(vec![lambda; dim.max(1)])
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            lambdas: vec![0.0; dim.max(1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Per-mode factors `exp(-lambda_k dt)`.
    pub fn semigroup_factors(&self, dt: f64) -> Vec<f64> {
        self.lambdas.iter().map(|l| (-l * dt).exp()).collect()
    }

    pub fn apply_semigroup(&self, dt: f64, v: &SpectralVector) -> Result<SpectralVector> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(FkError::InvalidInput {
                field: "dt",
                reason: format!("semigroup time must be finite and nonnegative, got {dt}"),
            });
        }
        check_dim("apply_semigroup", self.dim(), v.dim())?;
        if dt == 0.0 {
            return Ok(v.clone());
        }
        Ok(SpectralVector(
            self.lambdas
                .iter()
                .zip(v.coeffs())
                .map(|(l, c)| (-l * dt).exp() * c)
                .collect(),
        ))
    }
}

/// Diagonal weights of the operator `B` together with the constant `c0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BWeight {
    weights: Vec<f64>,
    c0: f64,
}

/// Outcome of [`BWeight::strong_b_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BCondition {
    Holds,
    /// Smallest violating mode (1-based) and its value of `(lambda_k + c0) b_k`.
    Violated {
        mode: usize,
        value: f64,
    },
}

impl BCondition {
    pub fn holds(&self) -> bool {
        matches!(self, BCondition::Holds)
    }
}

impl BWeight {
    pub fn new(weights: Vec<f64>, c0: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(FkError::InvalidInput {
                field: "b_weights",
                reason: "needs at least one mode".into(),
            });
        }
        if let Some(k) = weights.iter().position(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(FkError::InvalidInput {
                field: "b_weights",
                reason: format!("b_{} must be finite and strictly positive", k + 1),
            });
        }
        if !(c0.is_finite() && c0 >= 0.0) {
            return Err(FkError::InvalidInput {
                field: "c0",
                reason: format!("must be finite and nonnegative, got {c0}"),
            });
        }
        Ok(Self { weights, c0 })
    }

    /// `b_k = 1/(1 + lambda_k)` with `c0 = 1`; satisfies the strong B-condition with equality.
    pub fn canonical(generator: &DiagonalGenerator) -> Self {
        Self {
            weights: generator
                .lambdas()
                .iter()
                .map(|l| 1.0 / (1.0 + l))
                .collect(),
            c0: 1.0,
        }
    }

    /// Canonical weights with a caller-chosen `c0`.
    pub fn canonical_with_c0(generator: &DiagonalGenerator, c0: f64) -> Result<Self> {
        Self::new(Self::canonical(generator).weights, c0)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// The quadratic form `<Bv, v> = sum_k b_k v_k^2`.
    pub fn norm_hm1_sq(&self, v: &SpectralVector) -> Result<f64> {
        check_dim("norm_hm1_sq", self.dim(), v.dim())?;
        Ok(self.norm_hm1_sq_slice(v.coeffs()))
    }

    pub(crate) fn norm_hm1_sq_slice(&self, v: &[f64]) -> f64 {
        self.weights.iter().zip(v).map(|(b, c)| b * c * c).sum()
    }

    /// Diagonal form of `-A* B + c0 B >= I`, i.e. `(lambda_k + c0) b_k >= 1` for every `k`.
    pub fn strong_b_check(&self, generator: &DiagonalGenerator) -> Result<BCondition> {
        check_dim("strong_b_check", generator.dim(), self.dim())?;
        for (k, (l, b)) in generator.lambdas().iter().zip(&self.weights).enumerate() {
            let value = (l + self.c0) * b;
            if value < 1.0 - STRONG_B_RELATIVE_SLACK {
                return Ok(BCondition::Violated { mode: k + 1, value });
            }
        }
        Ok(BCondition::Holds)
    }
}

/// Truncation of the cylindrical noise to `d_xi` independent directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseModel {
    d_xi: usize,
}

impl NoiseModel {
    pub fn new(d_xi: usize) -> Result<Self> {
        if d_xi == 0 {
            return Err(FkError::InvalidInput {
                field: "noise_dim",
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self { d_xi })
    }

    pub fn dim(&self) -> usize {
        self.d_xi
    }
}
