//! Semilinear Feynman-Kac representation for parabolic equations on a
//! spectrally truncated Hilbert space.
//!
//! The value `u(t, x) = Y^{t,x}_t` is computed by simulating the forward
//! equation `dX = (AX + b) ds + sigma dW` with an exponential Euler scheme and
//! solving the backward equation `dY = f(s, X, Y, Z) ds + <Z, dW>`,
//! `Y_T = g(X_T)`, by least-squares regression. Around the solver sit the
//! checks that make its properties executable: explicit linear solutions,
//! comparison, a priori and stability estimates, B-continuity, terminal
//! behaviour and growth, plus a finite-difference reference in one dimension.
// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod calibration;
pub mod coefficients;
pub mod error;
pub mod export;
pub mod feynman_kac;
pub mod forward;
pub mod functional;
pub mod linear;
pub mod oracle_pde;
pub mod presets;
pub mod regression;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use bsde::{solve_backward, BsdePair, BsdeSolution};
pub use coefficients::{CoefficientField, Diffusion, Drift};
pub use error::{FkError, Result};
pub use export::{Verdict, VerdictBlock};
pub use feynman_kac::{evaluate_u, PdeProblem, SolverSettings, UEstimate};
pub use forward::{
    sample_increments, simulate_ensemble, ForwardModel, Increments, PathEnsemble, TimeGrid,
};
pub use functional::{DriverSpec, LinearDriver, TerminalFunctional};
pub use linear::{gamma_paths, solve_linear_explicit, GammaEnsemble};
pub use oracle_pde::{solve_semilinear_fd, FdSolution, Grid1D};
pub use regression::RegressionBasis;
pub use rng::RngPolicy;
pub use spectral::{BCondition, BWeight, DiagonalGenerator, NoiseModel, SpectralVector};
