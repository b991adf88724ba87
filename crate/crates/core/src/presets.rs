//! Named problems used by the command line tool, the tests and the benches.

use crate::coefficients::CoefficientField;
use crate::error::{FkError, Result};
use crate::feynman_kac::{PdeProblem, SolverSettings};
use crate::forward::ForwardModel;
use crate::functional::{DriverSpec, LinearDriver, TerminalFunctional};
use crate::regression::RegressionBasis;
use crate::spectral::{BWeight, DiagonalGenerator, NoiseModel, SpectralVector};

pub const PRESET_NAMES: [&str; 6] = [
    "heat_d8",
    "heat_d1",
    "ou",
    "linear",
    "frozen",
    "semilinear_sine",
];

/// A problem together with the point `(t, x)` it is usually evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub problem: PdeProblem,
    pub t: f64,
    pub x: SpectralVector,
}

pub fn default_settings(dim: usize) -> SolverSettings {
    SolverSettings {
        paths: 10_000,
        steps: 50,
        basis: RegressionBasis::default_for(dim),
        picard_iters: 1,
        seed: 42,
    }
}

/// Forward model with canonical `B` weights.
pub fn forward_model(
    generator: DiagonalGenerator,
    d_xi: usize,
    coeffs: CoefficientField,
) -> Result<ForwardModel> {
    let bweight = BWeight::canonical(&generator);
    ForwardModel::new(generator, bweight, NoiseModel::new(d_xi)?, coeffs)
}

/// Scalar OU forward model `dX = -lambda X dt + sigma dW`.
pub fn ou_model(lambda: f64, sigma: f64) -> Result<ForwardModel> {
    forward_model(
        DiagonalGenerator::identity_decay(1, lambda)?,
        1,
        CoefficientField::constant_sigma(sigma),
    )
}

/// Stochastic heat equation on `dim` Dirichlet-Laplacian modes with constant noise.
pub fn heat_model(dim: usize, sigma: f64) -> Result<ForwardModel> {
    forward_model(
        DiagonalGenerator::dirichlet_laplacian(dim),
        dim,
        CoefficientField::constant_sigma(sigma),
    )
}

pub fn preset(name: &str) -> Result<Preset> {
    let (forward, driver, terminal, horizon, x) = match name {
        "heat_d8" => (
            heat_model(8, 1.0)?,
            DriverSpec::Zero,
            TerminalFunctional::Mode { k: 1, scale: 1.0 },
            0.1,
            SpectralVector::basis(8, 1, 1.0),
        ),
        "heat_d1" => (
            forward_model(
                DiagonalGenerator::zero(1),
                1,
                CoefficientField::constant_sigma(1.0),
            )?,
            DriverSpec::Zero,
            TerminalFunctional::SquareMode { k: 1 },
            1.0,
            SpectralVector::zeros(1),
        ),
        "ou" => (
            ou_model(1.0, 1.0)?,
            DriverSpec::Zero,
            TerminalFunctional::Mode { k: 1, scale: 1.0 },
            1.0,
            SpectralVector::basis(1, 1, 1.0),
        ),
        "linear" => (
            ou_model(1.0, 1.0)?,
            DriverSpec::Linear(LinearDriver::constant(0.3, 0.1, vec![0.2])),
            TerminalFunctional::Mode { k: 1, scale: 1.0 },
            1.0,
            SpectralVector::basis(1, 1, 1.0),
        ),
        "frozen" => (
            forward_model(DiagonalGenerator::zero(1), 1, CoefficientField::zero())?,
            DriverSpec::Zero,
            TerminalFunctional::SinMode { k: 1 },
            1.0,
            SpectralVector::basis(1, 1, 0.7),
        ),
        "semilinear_sine" => (
            forward_model(
                DiagonalGenerator::zero(1),
                1,
                CoefficientField::constant_sigma(1.0),
            )?,
            DriverSpec::SinY { scale: 1.0 },
            TerminalFunctional::CosMode { k: 1 },
            1.0,
            SpectralVector::zeros(1),
        ),
        other => return Err(FkError::UnknownTag(other.to_string())),
    };
    let settings = default_settings(forward.dim());
    Ok(Preset {
        name: name.to_string(),
        problem: PdeProblem::new(forward, driver, terminal, horizon, settings)?,
        t: 0.0,
        x,
    })
}

/// Five linear drivers with terminal data, all over the scalar OU process.
pub fn linear_family() -> Vec<(LinearDriver, TerminalFunctional)> {
    vec![
        (
            LinearDriver::constant(0.3, 0.1, vec![0.2]),
            TerminalFunctional::Mode { k: 1, scale: 1.0 },
        ),
        (
            LinearDriver::constant(-0.2, 0.5, vec![-0.3]),
            TerminalFunctional::SinMode { k: 1 },
        ),
        (
            LinearDriver {
                a0: 0.3,
                a1: 0.2,
                b0: 0.1,
                b1: 0.2,
                c: vec![0.1],
            },
            TerminalFunctional::Mode { k: 1, scale: 1.0 },
        ),
        (
            LinearDriver::constant(0.0, 1.0, vec![0.0]),
            TerminalFunctional::Constant { kappa: 1.0 },
        ),
        (
            LinearDriver::constant(0.5, 0.0, vec![0.5]),
            TerminalFunctional::CosMode { k: 1 },
        ),
    ]
}
