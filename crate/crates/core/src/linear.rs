//! Explicit solution of linear BSDEs
//! `dY = -(a Y + b_lin + <c, Z>) ds + <Z, dW>`, `Y_T = eta`,
//! through the exponential weight
//! `Gamma_s = exp(int (a - |c|^2/2) dr + int <c, dW>)`.
//!
//! Used as the reference the regression solver is checked against. Only the
//! value at the initial time is produced here: there the conditional
//! expectation is a plain expectation and no regression is involved.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, FkError, Result};
use crate::forward::PathEnsemble;
use crate::functional::{LinearDriver, TerminalFunctional};
use crate::stats::{combine_stderr, mean_stderr};

/// `log Gamma` per path and grid node, path-major `paths x (steps + 1)`.
#[derive(Debug, Clone)]
pub struct GammaEnsemble {
    paths: usize,
    steps: usize,
    log_gamma: Vec<f64>,
}

impl GammaEnsemble {
    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn log_gamma(&self, path: usize, step: usize) -> f64 {
        self.log_gamma[path * (self.steps + 1) + step]
    }

    pub fn gamma(&self, path: usize, step: usize) -> f64 {
        self.log_gamma(path, step).exp()
    }
}

/// `log Gamma` accumulated with left-point sums, restarted at grid node `start`
/// (nodes before `start` are zero).
pub fn gamma_paths_from(
    driver: &LinearDriver,
    ensemble: &PathEnsemble,
    start: usize,
) -> Result<GammaEnsemble> {
    check_dim("linear driver c", ensemble.noise_dim(), driver.c.len())?;
    let steps = ensemble.steps();
    if start > steps {
        return Err(FkError::InvalidInput {
            field: "gamma start",
            reason: format!("node {start} beyond {steps} steps"),
        });
    }
    let dt = ensemble.grid().dt();
    let half_c2 = 0.5 * driver.c_norm_sq();
    let grid = *ensemble.grid();
    let mut log_gamma = vec![0.0; ensemble.paths() * (steps + 1)];
    let failures: Vec<Option<(usize, usize)>> = log_gamma
        .par_chunks_mut(steps + 1)
        .enumerate()
        .map(|(m, row)| {
            for i in start..steps {
                let t = grid.time(i);
                let x = ensemble.state(m, i);
                let dw = ensemble.increment(m, i);
                let ito: f64 = driver.c(t, x).iter().zip(dw).map(|(c, w)| c * w).sum();
                row[i + 1] = row[i] + (driver.a(t, x) - half_c2) * dt + ito;
                if !row[i + 1].is_finite() {
                    return Some((m, i + 1));
                }
            }
            None
        })
        .collect();
    if let Some((path, step)) = failures.into_iter().flatten().next() {
        return Err(FkError::Overflow {
            context: "log Gamma",
            path,
            step,
        });
    }
    Ok(GammaEnsemble {
        paths: ensemble.paths(),
        steps,
        log_gamma,
    })
}

pub fn gamma_paths(driver: &LinearDriver, ensemble: &PathEnsemble) -> Result<GammaEnsemble> {
    gamma_paths_from(driver, ensemble, 0)
}

#[derive(Debug, Clone)]
pub struct LinearEstimate {
    pub y0: f64,
    pub stderr: f64,
    /// `Gamma_T eta(X_T) + sum_i Gamma_i b_lin(t_i, X_i) dt` per path.
    pub payload: Vec<f64>,
}

/// `Y_t = E[Gamma_T eta + int Gamma_r b_lin dr]`, using `Gamma_t = 1`.
pub fn solve_linear_explicit(
    driver: &LinearDriver,
    terminal: &TerminalFunctional,
    ensemble: &PathEnsemble,
    gamma: &GammaEnsemble,
) -> Result<LinearEstimate> {
    check_dim("gamma paths", ensemble.paths(), gamma.paths())?;
    check_dim("gamma steps", ensemble.steps(), gamma.steps())?;
    let steps = ensemble.steps();
    let dt = ensemble.grid().dt();
    let grid = *ensemble.grid();
    let payload: Vec<f64> = (0..ensemble.paths())
        .into_par_iter()
        .map(|m| {
            let mut acc = 0.0;
            for i in 0..steps {
                acc += gamma.gamma(m, i) * driver.b_lin(grid.time(i), ensemble.state(m, i)) * dt;
            }
            acc + gamma.gamma(m, steps) * terminal.eval(ensemble.terminal(m))
        })
        .collect();
    if let Some(m) = payload.iter().position(|v| !v.is_finite()) {
        return Err(FkError::Overflow {
            context: "linear payload",
            path: m,
            step: steps,
        });
    }
    let est = mean_stderr(&payload);
    Ok(LinearEstimate {
        y0: est.mean,
        stderr: est.stderr,
        payload,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub candidate_y0: f64,
    pub explicit_y0: f64,
    pub margin: f64,
    pub stderr: f64,
    pub holds: bool,
}

/// Checks that a candidate supersolution dominates the explicit solution at
/// the initial time, up to three combined standard errors.
///
/// `candidate_y` is laid out `paths x (steps + 1)`; only node 0 is read.
pub fn dominance_check(
    candidate_y: &[f64],
    driver: &LinearDriver,
    terminal: &TerminalFunctional,
    ensemble: &PathEnsemble,
    gamma: &GammaEnsemble,
) -> Result<DominanceReport> {
    let width = ensemble.steps() + 1;
    check_dim("candidate y", ensemble.paths() * width, candidate_y.len())?;
    let explicit = solve_linear_explicit(driver, terminal, ensemble, gamma)?;
    let initial: Vec<f64> = candidate_y.iter().step_by(width).copied().collect();
    let cand = mean_stderr(&initial);
    let stderr = combine_stderr(cand.stderr, explicit.stderr);
    let margin = cand.mean - explicit.y0;
    Ok(DominanceReport {
        candidate_y0: cand.mean,
        explicit_y0: explicit.y0,
        margin,
        stderr,
        holds: margin >= -3.0 * stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub step: usize,
    pub mean_increment: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    /// Steps whose mean increment is further than 3 standard errors from zero.
    pub exceedances: usize,
    pub allowed: usize,
    pub holds: bool,
}

/// Tests that `Gamma_s Y_s + int_t^s Gamma_r b_lin dr` has mean-zero
/// increments, which is what `Z = Gamma^{-1} V - c Y` amounts to once the
/// representation process `V` is eliminated.
pub fn martingale_identity_check(
    driver: &LinearDriver,
    ensemble: &PathEnsemble,
    gamma: &GammaEnsemble,
    y: &[f64],
) -> Result<MartingaleReport> {
    let steps = ensemble.steps();
    let width = steps + 1;
    check_dim("y field", ensemble.paths() * width, y.len())?;
    let dt = ensemble.grid().dt();
    let grid = *ensemble.grid();
    let mut rows = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = grid.time(i);
        let inc: Vec<f64> = (0..ensemble.paths())
            .into_par_iter()
            .map(|m| {
                let g0 = gamma.gamma(m, i);
                let g1 = gamma.gamma(m, i + 1);
                g1 * y[m * width + i + 1] - g0 * y[m * width + i]
                    + g0 * driver.b_lin(t, ensemble.state(m, i)) * dt
            })
            .collect();
        let e = mean_stderr(&inc);
        rows.push(MartingaleRow {
            step: i,
            mean_increment: e.mean,
            stderr: e.stderr,
        });
    }
    let exceedances = rows
        .iter()
        .filter(|r| r.mean_increment.abs() > 3.0 * r.stderr)
        .count();
    let allowed = steps.div_ceil(100);
    Ok(MartingaleReport {
        rows,
        exceedances,
        allowed,
        holds: exceedances <= allowed,
    })
}
