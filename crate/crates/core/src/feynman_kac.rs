//! Pointwise evaluation of `u(t, x) = Y^{t,x}_t` and the probes that check its
//! analytic properties.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{solve_backward, BsdeSolution};
use crate::error::{check_dim, FkError, Result};
use crate::export::VerdictBlock;
use crate::forward::{ForwardModel, PathEnsemble, TimeGrid};
use crate::functional::{DriverSpec, TerminalFunctional};
use crate::oracle_pde::FdSolution;
use crate::regression::RegressionBasis;
use crate::rng::RngPolicy;
use crate::spectral::SpectralVector;
use crate::stats::{combine_stderr, ls_slope, mean_stderr};

/// Discretisation and Monte Carlo settings shared by every evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub paths: usize,
    pub steps: usize,
    pub basis: RegressionBasis,
    pub picard_iters: usize,
    pub seed: u64,
}

/// Full problem data: forward model, driver, terminal functional, horizon and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub forward: ForwardModel,
    pub driver: DriverSpec,
    pub terminal: TerminalFunctional,
    pub horizon: f64,
    pub settings: SolverSettings,
}

impl PdeProblem {
    pub fn new(
        forward: ForwardModel,
        driver: DriverSpec,
        terminal: TerminalFunctional,
        horizon: f64,
        settings: SolverSettings,
    ) -> Result<Self> {
        driver.validate(forward.noise_dim())?;
        terminal.validate(forward.dim())?;
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(FkError::InvalidInput {
                field: "horizon",
                reason: format!("must be positive and finite, got {horizon}"),
            });
        }
        if settings.paths < 2 {
            return Err(FkError::InvalidInput {
                field: "paths",
                reason: "need at least 2 paths for an error estimate".into(),
            });
        }
        if settings.steps == 0 {
            return Err(FkError::InvalidInput {
                field: "steps",
                reason: "need at least one time step".into(),
            });
        }
        Ok(Self {
            forward,
            driver,
            terminal,
            horizon,
            settings,
        })
    }

    pub fn dim(&self) -> usize {
        self.forward.dim()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut p = self.clone();
        p.settings.seed = seed;
        p
    }

    /// Grid from `t` to the horizon with `settings.steps` steps.
    pub fn grid_from(&self, t: f64) -> Result<TimeGrid> {
        if !(t < self.horizon) {
            return Err(FkError::InvalidInput {
                field: "t",
                reason: format!("must be below the horizon {}, got {t}", self.horizon),
            });
        }
        TimeGrid::new(t, self.horizon, self.settings.steps)
    }

    /// Forward ensemble started at `x` at time `t` and the BSDE solved on it.
    pub fn solve_from(&self, t: f64, x: &SpectralVector) -> Result<(PathEnsemble, BsdeSolution)> {
        check_dim("initial state", self.dim(), x.dim())?;
        let grid = self.grid_from(t)?;
        let ens =
            self.forward
                .simulate_seeded(&grid, x, self.settings.paths, self.settings.seed)?;
        let sol = solve_backward(
            &self.driver,
            &self.terminal,
            &ens,
            &self.settings.basis,
            self.settings.picard_iters,
        )?;
        Ok((ens, sol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub steps: usize,
    pub paths: usize,
    pub basis: RegressionBasis,
    pub max_condition: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UEstimate {
    pub value: f64,
    pub stderr: f64,
    pub diagnostics: Diagnostics,
}

/// `u(t, x)` from a fresh ensemble started at `x`.
pub fn evaluate_u(problem: &PdeProblem, t: f64, x: &SpectralVector) -> Result<UEstimate> {
    let (_, sol) = problem.solve_from(t, x)?;
    Ok(u_from_solution(problem, &sol))
}

fn u_from_solution(problem: &PdeProblem, sol: &BsdeSolution) -> UEstimate {
    UEstimate {
        value: sol.y0,
        stderr: sol.y0_stderr,
        diagnostics: Diagnostics {
            steps: problem.settings.steps,
            paths: problem.settings.paths,
            basis: problem.settings.basis,
            max_condition: sol.max_condition(),
            seed: problem.settings.seed,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarkovReport {
    pub t: f64,
    pub h: f64,
    pub step: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub stderr: f64,
    pub holds: bool,
}

impl MarkovReport {
    pub fn verdict(&self, seed: u64) -> VerdictBlock {
        VerdictBlock::new(
            "markov_consistency",
            self.holds,
            self.gap.abs(),
            3.0 * self.stderr,
            seed,
        )
    }
}

/// `u(t, x)` against `E[u(t + h, X_{t+h})] - E[int_t^{t+h} f ds]`, the inner
/// values read from the same solution at the node of `t + h`.
pub fn markov_consistency_check(
    problem: &PdeProblem,
    t: f64,
    x: &SpectralVector,
    h: f64,
) -> Result<MarkovReport> {
    let grid = problem.grid_from(t)?;
    let k = grid.index_of(t + h).ok_or_else(|| {
        FkError::GridMisalignment(format!("t + h = {} is not a grid node", t + h))
    })?;
    if k == 0 || k >= grid.steps() {
        return Err(FkError::GridMisalignment(format!(
            "t + h must be an interior node, got index {k} of {}",
            grid.steps()
        )));
    }
    let (ens, sol) = problem.solve_from(t, x)?;
    let dt = grid.dt();
    let inner: Vec<f64> = (0..ens.paths())
        .into_par_iter()
        .map(|m| {
            let mut run = 0.0;
            for i in 0..k {
                run += problem.driver.eval(
                    grid.time(i),
                    ens.state(m, i),
                    sol.y_at(m, i),
                    sol.z_at(m, i),
                ) * dt;
            }
            sol.y_at(m, k) - run
        })
        .collect();
    let rhs = mean_stderr(&inner);
    let gap = sol.y0 - rhs.mean;
    Ok(MarkovReport {
        t,
        h,
        step: k,
        lhs: sol.y0,
        rhs: rhs.mean,
        gap,
        stderr: rhs.stderr,
        holds: gap.abs() <= 3.0 * rhs.stderr || gap.abs() <= 1e-12 * (1.0 + sol.y0.abs()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BContinuityRow {
    /// Mode carrying the largest coefficient of the perturbation, 1-based.
    pub mode: usize,
    pub norm_h: f64,
    pub norm_hm1_sq: f64,
    pub u_base: f64,
    pub u_perturbed: f64,
    pub diff_sq: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BContinuityReport {
    pub rows: Vec<BContinuityRow>,
    pub max_ratio: f64,
}

impl BContinuityReport {
    pub fn verdict(&self, seed: u64) -> VerdictBlock {
        VerdictBlock::new(
            "b_continuity",
            self.max_ratio.is_finite(),
            self.max_ratio,
            f64::INFINITY,
            seed,
        )
    }
}

/// Perturbations `scale * e_k` for every listed mode and magnitude.
pub fn mode_perturbations(dim: usize, modes: &[usize], magnitudes: &[f64]) -> Vec<SpectralVector> {
    modes
        .iter()
        .flat_map(|&k| {
            magnitudes
                .iter()
                .map(move |&s| SpectralVector::basis(dim, k, s))
        })
        .collect()
}

/// `|u(t, x + p) - u(t, x)|^2 / |p|_{-1}^2` for each perturbation `p`, all
/// evaluations sharing the problem seed.
pub fn b_continuity_probe(
    problem: &PdeProblem,
    t: f64,
    x: &SpectralVector,
    perturbations: &[SpectralVector],
) -> Result<BContinuityReport> {
    for p in perturbations {
        check_dim("perturbation", problem.dim(), p.dim())?;
        if p.coeffs().iter().all(|v| *v == 0.0) {
            return Err(FkError::Precondition(
                "perturbations must be nonzero".into(),
            ));
        }
    }
    let base = evaluate_u(problem, t, x)?.value;
    let rows: Vec<BContinuityRow> = perturbations
        .par_iter()
        .map(|p| -> Result<BContinuityRow> {
            let u = evaluate_u(problem, t, &x.add(p)?)?.value;
            let hm1 = problem.forward.bweight.norm_hm1_sq(p)?;
            let mode = p
                .coeffs()
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (k, v)| {
                    if v.abs() > acc.1 {
                        (k, v.abs())
                    } else {
                        acc
                    }
                })
                .0
                + 1;
            let diff_sq = (u - base).powi(2);
            Ok(BContinuityRow {
                mode,
                norm_h: p.norm_h(),
                norm_hm1_sq: hm1,
                u_base: base,
                u_perturbed: u,
                diff_sq,
                ratio: diff_sq / hm1,
            })
        })
        .collect::<Result<_>>()?;
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(BContinuityReport { rows, max_ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalRow {
    pub t: f64,
    pub u: f64,
    pub stderr: f64,
    pub target: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalReport {
    pub rows: Vec<TerminalRow>,
    pub decreasing: bool,
    pub final_error: f64,
    pub tolerance: f64,
    pub holds: bool,
}

impl TerminalReport {
    pub fn verdict(&self, seed: u64) -> VerdictBlock {
        VerdictBlock::new(
            "terminal_condition",
            self.holds,
            self.final_error,
            self.tolerance,
            seed,
        )
    }
}

/// `|u(t, x) - g(S(T - t) x)|` along `times`, each evaluation on its own derived seed.
pub fn terminal_condition_probe(
    problem: &PdeProblem,
    x: &SpectralVector,
    times: &[f64],
    tolerance: f64,
) -> Result<TerminalReport> {
    if times.is_empty()
        || times.windows(2).any(|w| !(w[0] < w[1]))
        || times.iter().any(|t| !(*t < problem.horizon))
    {
        return Err(FkError::Precondition(
            "times must be nonempty, strictly increasing and below the horizon".into(),
        ));
    }
    let policy = RngPolicy::new(problem.settings.seed);
    let rows: Vec<TerminalRow> = times
        .par_iter()
        .enumerate()
        .map(|(j, &t)| -> Result<TerminalRow> {
            let p = problem.with_seed(policy.derive(j as u64).seed);
            let u = evaluate_u(&p, t, x)?;
            let flowed = problem
                .forward
                .generator
                .apply_semigroup(problem.horizon - t, x)?;
            let target = problem.terminal.eval(flowed.coeffs());
            Ok(TerminalRow {
                t,
                u: u.value,
                stderr: u.stderr,
                target,
                error: (u.value - target).abs(),
            })
        })
        .collect::<Result<_>>()?;
    let decreasing = rows
        .windows(2)
        .all(|w| w[1].error <= w[0].error + 3.0 * combine_stderr(w[0].stderr, w[1].stderr));
    let final_error = rows.last().map(|r| r.error).unwrap_or(0.0);
    Ok(TerminalReport {
        decreasing,
        final_error,
        tolerance,
        holds: decreasing && final_error <= tolerance,
        rows,
    })
}

/// Largest accepted fitted exponent of `|u|` against `|x|_H`.
pub const GROWTH_EXPONENT_LIMIT: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRow {
    pub magnitude: f64,
    pub norm_h: f64,
    pub u: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    pub exponent: f64,
    pub holds: bool,
}

impl GrowthReport {
    pub fn verdict(&self, seed: u64) -> VerdictBlock {
        VerdictBlock::new(
            "growth",
            self.holds,
            self.exponent,
            GROWTH_EXPONENT_LIMIT,
            seed,
        )
    }
}

/// Least-squares slope of `ln(1 + |u|)` against `ln(1 + |x|_H)` for
/// `x = magnitude * direction`.
pub fn growth_probe(
    problem: &PdeProblem,
    t: f64,
    direction: &SpectralVector,
    magnitudes: &[f64],
) -> Result<GrowthReport> {
    if magnitudes.len() < 2
        || magnitudes.iter().any(|m| !(*m > 0.0))
        || magnitudes.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(FkError::Precondition(
            "need at least two positive, increasing magnitudes".into(),
        ));
    }
    let rows: Vec<GrowthRow> = magnitudes
        .par_iter()
        .map(|&s| -> Result<GrowthRow> {
            let x = direction.scaled(s);
            let u = evaluate_u(problem, t, &x)?;
            Ok(GrowthRow {
                magnitude: s,
                norm_h: x.norm_h(),
                u: u.value,
                stderr: u.stderr,
            })
        })
        .collect::<Result<_>>()?;
    let lx: Vec<f64> = rows.iter().map(|r| r.norm_h.ln_1p()).collect();
    let lu: Vec<f64> = rows.iter().map(|r| r.u.abs().ln_1p()).collect();
    let exponent = ls_slope(&lx, &lu);
    Ok(GrowthReport {
        holds: exponent <= GROWTH_EXPONENT_LIMIT,
        exponent,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleRow {
    pub t: f64,
    pub x: f64,
    pub u: f64,
    pub stderr: f64,
    pub reference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub max_relative_error: f64,
}

impl OracleReport {
    pub fn verdict(&self, tolerance: f64, seed: u64) -> VerdictBlock {
        VerdictBlock::new(
            "oracle_compare",
            self.max_relative_error <= tolerance,
            self.max_relative_error,
            tolerance,
            seed,
        )
    }
}

/// Relative gap between `u` and a deterministic reference at `(t, x)` points of a scalar problem.
pub fn oracle_compare(
    problem: &PdeProblem,
    oracle: &FdSolution,
    points: &[(f64, f64)],
) -> Result<OracleReport> {
    if problem.dim() != 1 || problem.forward.noise_dim() != 1 {
        return Err(FkError::OracleDomain(format!(
            "comparison needs d = d_xi = 1, got d = {}, d_xi = {}",
            problem.dim(),
            problem.forward.noise_dim()
        )));
    }
    crate::oracle_pde::FdModel::from_forward(&problem.forward)?;
    let rows: Vec<OracleRow> = points
        .par_iter()
        .map(|&(t, x)| -> Result<OracleRow> {
            let reference = oracle.value_at(t, x)?;
            let u = evaluate_u(problem, t, &SpectralVector::new(vec![x])?)?;
            Ok(OracleRow {
                t,
                x,
                u: u.value,
                stderr: u.stderr,
                reference,
                relative_error: (u.value - reference).abs() / reference.abs().max(1e-12),
            })
        })
        .collect::<Result<_>>()?;
    let max_relative_error = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    Ok(OracleReport {
        rows,
        max_relative_error,
    })
}
