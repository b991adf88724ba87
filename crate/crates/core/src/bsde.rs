//! Scalar BSDE `dY = f(s, X, Y, Z) ds + <Z, dW>`, `Y_T = g(X_T)`, solved
//! backward by least-squares regression, together with the comparison,
//! super/subsolution and a priori checks built on top of it.
//!
//! Scheme, for `i = N-1, ..., 0`:
//!
//! ```text
//! Ybar_i = E[Y_{i+1} | X_i]
//! Z_i    = E[(Y_{i+1} - Ybar_i) dW_i | X_i] / dt
//! Y_i    = Ybar_i - f(t_i, X_i, Ybar_i, Z_i) dt        (then Picard: Ybar_i -> Y_i)
//! ```
//!
//! Conditional expectations are regressions on [`RegressionBasis`]; at the
//! root node all paths share `X_0` and the regression is the plain mean.
//! When the paths carry no spread at all (noise-free dynamics) every
//! regression is a mean, `Z` vanishes and the recursion is the pathwise ODE.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, FkError, Result};
use crate::forward::PathEnsemble;
use crate::functional::{DriverSpec, TerminalFunctional};
use crate::regression::{Design, Projector, RegressionBasis};
use crate::stats::{combine_stderr, mean_stderr};

/// Discrete `(Y, Z)` over an ensemble.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    paths: usize,
    steps: usize,
    d_xi: usize,
    /// `paths x (steps + 1)`
    pub y: Vec<f64>,
    /// `paths x steps x d_xi`
    pub z: Vec<f64>,
    /// Coefficients of the `Ybar` regression per step (index = step).
    pub beta: Vec<Vec<f64>>,
    /// Gram condition number per step.
    pub conditions: Vec<f64>,
    /// Number of steps that needed the ridge term.
    pub ridged_steps: usize,
    pub y0: f64,
    pub y0_stderr: f64,
    /// `g(X_T) - sum_i f(t_i, X_i, Y_i, Z_i) dt` per path; the spread behind `y0_stderr`.
    pub pathwise: Vec<f64>,
}

impl BsdeSolution {
    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn noise_dim(&self) -> usize {
        self.d_xi
    }

    pub fn y_at(&self, path: usize, step: usize) -> f64 {
        self.y[path * (self.steps + 1) + step]
    }

    pub fn z_at(&self, path: usize, step: usize) -> &[f64] {
        let s = (path * self.steps + step) * self.d_xi;
        &self.z[s..s + self.d_xi]
    }

    pub fn max_condition(&self) -> f64 {
        self.conditions.iter().cloned().fold(1.0, f64::max)
    }
}

/// Solves the BSDE on `ensemble`. `picard_iters` extra fixed-point sweeps
/// replace the explicit driver argument by the current `Y_i` iterate.
pub fn solve_backward(
    driver: &DriverSpec,
    terminal: &TerminalFunctional,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
    picard_iters: usize,
) -> Result<BsdeSolution> {
    driver.validate(ensemble.noise_dim())?;
    terminal.validate(ensemble.dim())?;
    BackwardSetup::new(ensemble, basis).solve(driver, terminal, picard_iters)
}

/// The path-dependent part of the backward sweep: node-major states and
/// increments and one factorised regression per step. Build it once to solve
/// several drivers or terminals on the same ensemble.
pub struct BackwardSetup<'a> {
    ensemble: &'a PathEnsemble,
    states: Vec<f64>,
    dw: Vec<f64>,
    projectors: Vec<Result<Projector>>,
}

impl<'a> BackwardSetup<'a> {
    pub fn new(ensemble: &'a PathEnsemble, basis: &RegressionBasis) -> Self {
        let (paths, steps, dim) = (ensemble.paths(), ensemble.steps(), ensemble.dim());
        // The sweep reads one node across all paths; keep that contiguous.
        let states = transpose(ensemble.states(), paths, steps + 1, dim);
        let dw = transpose(
            ensemble.increments().data(),
            paths,
            steps,
            ensemble.noise_dim(),
        );
        let projectors = (0..steps)
            .map(|i| {
                let design = if i == 0 {
                    Design::constant(paths)
                } else {
                    basis.design_from_states(&states[i * paths * dim..(i + 1) * paths * dim], dim)
                };
                Projector::new(design, i)
            })
            .collect();
        Self {
            ensemble,
            states,
            dw,
            projectors,
        }
    }

    pub fn ensemble(&self) -> &PathEnsemble {
        self.ensemble
    }

    /// As [`solve_backward`] on the setup's ensemble and basis.
    pub fn solve(
        &self,
        driver: &DriverSpec,
        terminal: &TerminalFunctional,
        picard_iters: usize,
    ) -> Result<BsdeSolution> {
        let ensemble = self.ensemble;
        driver.validate(ensemble.noise_dim())?;
        terminal.validate(ensemble.dim())?;
        let paths = ensemble.paths();
        let steps = ensemble.steps();
        let d_xi = ensemble.noise_dim();
        let width = steps + 1;
        let grid = *ensemble.grid();
        let dt = grid.dt();
        let dim = ensemble.dim();
        let (states, dw) = (&self.states, &self.dw);
        let state_at =
            |i: usize, m: usize| &states[(i * paths + m) * dim..(i * paths + m + 1) * dim];

        let mut y_nodes = vec![0.0; width * paths];
        let mut z_nodes = vec![0.0; steps * paths * d_xi];
        // Driver at the final iterate, for the pathwise value.
        let mut f_nodes = vec![0.0; steps * paths];
        let mut beta = vec![Vec::new(); steps];
        let mut conditions = vec![1.0; steps];
        let mut ridged_steps = 0;

        let mut next: Vec<f64> = (0..paths)
            .into_par_iter()
            .map(|m| terminal.eval(ensemble.terminal(m)))
            .collect();
        if let Some(m) = next.iter().position(|v| !v.is_finite()) {
            return Err(FkError::Overflow {
                context: "terminal value",
                path: m,
                step: steps,
            });
        }
        y_nodes[steps * paths..].copy_from_slice(&next);

        for i in (0..steps).rev() {
            let t = grid.time(i);
            let proj = self.projectors[i].as_ref().map_err(Clone::clone)?;
            let design = proj.design();
            conditions[i] = proj.condition;
            ridged_steps += usize::from(proj.ridged);

            // Centre on one path's value so that a constant target is fitted exactly.
            let pivot = next[0];
            let centred: Vec<f64> = next.iter().map(|v| v - pivot).collect();
            let fit_y = proj.fit(&[&centred]);
            beta[i] = fit_y.coefficients(0);
            let ybar: Vec<f64> = (0..paths)
                .into_par_iter()
                .with_min_len(MIN_LEN)
                .map(|m| pivot + fit_y.predict(design, m, 0))
                .collect();

            let dw_i = &dw[i * paths * d_xi..(i + 1) * paths * d_xi];
            let z_targets: Vec<Vec<f64>> = (0..d_xi)
                .map(|k| {
                    (0..paths)
                        .into_par_iter()
                        .with_min_len(MIN_LEN)
                        .map(|m| (next[m] - ybar[m]) * dw_i[m * d_xi + k] / dt)
                        .collect()
                })
                .collect();
            let refs: Vec<&[f64]> = z_targets.iter().map(|v| v.as_slice()).collect();
            let fit_z = proj.fit(&refs);

            let (y_i, z_i) = (
                &mut y_nodes[i * paths..(i + 1) * paths],
                &mut z_nodes[i * paths * d_xi..(i + 1) * paths * d_xi],
            );
            let f_i = &mut f_nodes[i * paths..(i + 1) * paths];
            y_i.par_iter_mut()
                .zip(z_i.par_chunks_mut(d_xi))
                .zip(f_i.par_iter_mut())
                .enumerate()
                .with_min_len(MIN_LEN)
                .for_each(|(m, ((ym, zm), fm))| {
                    for (k, zk) in zm.iter_mut().enumerate() {
                        *zk = fit_z.predict(design, m, k);
                    }
                    let f = driver.at(t, state_at(i, m));
                    let mut yi = ybar[m] - f.eval(ybar[m], zm) * dt;
                    for _ in 0..picard_iters {
                        yi = ybar[m] - f.eval(yi, zm) * dt;
                    }
                    *ym = yi;
                    *fm = f.eval(yi, zm);
                });
            if let Some(m) = y_i.iter().position(|v| !v.is_finite()) {
                return Err(FkError::Overflow {
                    context: "Y",
                    path: m,
                    step: i,
                });
            }
            next.copy_from_slice(y_i);
        }

        // Same per-path operation order as a forward loop over steps.
        let mut pathwise = y_nodes[steps * paths..].to_vec();
        for f_i in f_nodes.chunks_exact(paths) {
            pathwise
                .par_iter_mut()
                .zip(f_i.par_iter())
                .with_min_len(MIN_LEN)
                .for_each(|(acc, f)| *acc -= f * dt);
        }
        let y0 = crate::stats::mean(&y_nodes[..paths]);
        let y = transpose(&y_nodes, width, paths, 1);
        let z = transpose(&z_nodes, steps, paths, d_xi);
        drop((y_nodes, z_nodes, f_nodes));
        let y0_stderr = mean_stderr(&pathwise).stderr;

        Ok(BsdeSolution {
            paths,
            steps,
            d_xi,
            y,
            z,
            beta,
            conditions,
            ridged_steps,
            y0,
            y0_stderr,
            pathwise,
        })
    }
}

/// Both problems on one ensemble, sharing the regressions.
fn solve_pair(
    first: BsdePair<'_>,
    second: BsdePair<'_>,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
    picard_iters: usize,
) -> Result<(BsdeSolution, BsdeSolution)> {
    first.driver.validate(ensemble.noise_dim())?;
    first.terminal.validate(ensemble.dim())?;
    let setup = BackwardSetup::new(ensemble, basis);
    let s1 = setup.solve(first.driver, first.terminal, picard_iters)?;
    let s2 = setup.solve(second.driver, second.terminal, picard_iters)?;
    Ok((s1, s2))
}

/// Smallest work unit of the per-path parallel loops.
const MIN_LEN: usize = 1024;

/// Reorders a `rows x cols` table of `elem`-wide entries into `cols x rows`.
fn transpose(src: &[f64], rows: usize, cols: usize, elem: usize) -> Vec<f64> {
    const TILE: usize = 32;
    let mut dst = vec![0.0; src.len()];
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    let from = (r * cols + c) * elem;
                    let to = (c * rows + r) * elem;
                    dst[to..to + elem].copy_from_slice(&src[from..from + elem]);
                }
            }
        }
    }
    dst
}

/// One BSDE problem: driver plus terminal data.
#[derive(Debug, Clone, Copy)]
pub struct BsdePair<'a> {
    pub driver: &'a DriverSpec,
    pub terminal: &'a TerminalFunctional,
}

impl<'a> BsdePair<'a> {
    pub fn new(driver: &'a DriverSpec, terminal: &'a TerminalFunctional) -> Self {
        Self { driver, terminal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub y0_first: f64,
    pub y0_second: f64,
    /// `Y^2_0 - Y^1_0`
    pub margin: f64,
    pub stderr: f64,
    pub weak_holds: bool,
    /// Smallest pathwise value of `eta^2 - eta^1 + int (f^1 - f^2)(Y^2, Z^2) dr`.
    pub min_strict_gap: f64,
    pub strict_applicable: bool,
    pub strict_holds: bool,
}

/// Slack for the pathwise precondition checks.
const PRECONDITION_SLACK: f64 = 1e-12;

/// Solves both problems on the same ensemble and checks `Y^2 >= Y^1` at the
/// initial time. The hypotheses `eta^2 >= eta^1` and `f^2 <= f^1` along
/// `(Y^2, Z^2)` are checked on every path; a violation is an error because
/// the comparison result does not apply.
pub fn comparison_check(
    first: BsdePair<'_>,
    second: BsdePair<'_>,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
    picard_iters: usize,
) -> Result<ComparisonReport> {
    let (s1, s2) = solve_pair(first, second, ensemble, basis, picard_iters)?;
    let steps = ensemble.steps();
    let dt = ensemble.grid().dt();
    let grid = *ensemble.grid();

    let gaps: Vec<std::result::Result<f64, String>> = (0..ensemble.paths())
        .into_par_iter()
        .map(|m| {
            let xt = ensemble.terminal(m);
            let eta_gap = second.terminal.eval(xt) - first.terminal.eval(xt);
            if eta_gap < -PRECONDITION_SLACK {
                return Err(format!("eta^2 < eta^1 on path {m} (gap {eta_gap:.3e})"));
            }
            let mut total = eta_gap;
            for i in 0..steps {
                let t = grid.time(i);
                let x = ensemble.state(m, i);
                let y2 = s2.y_at(m, i);
                let z2 = s2.z_at(m, i);
                let d = first.driver.eval(t, x, y2, z2) - second.driver.eval(t, x, y2, z2);
                if d < -PRECONDITION_SLACK {
                    return Err(format!("f^2 > f^1 on path {m} at step {i} (gap {d:.3e})"));
                }
                total += d * dt;
            }
            Ok(total)
        })
        .collect();
    let mut min_strict_gap = f64::INFINITY;
    for g in gaps {
        min_strict_gap = min_strict_gap.min(g.map_err(FkError::Precondition)?);
    }
    let margin = s2.y0 - s1.y0;
    let stderr = combine_stderr(s1.y0_stderr, s2.y0_stderr);
    let strict_applicable = min_strict_gap > 0.0;
    Ok(ComparisonReport {
        y0_first: s1.y0,
        y0_second: s2.y0,
        margin,
        stderr,
        weak_holds: margin >= -3.0 * stderr,
        min_strict_gap,
        strict_applicable,
        strict_holds: strict_applicable && margin > 3.0 * stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    /// Increasing `I`: supersolution.
    Increasing,
    /// Decreasing `D`: subsolution.
    Decreasing,
    /// Both within tolerance: a solution.
    Constant,
    Neither,
}

/// The discrete process `I_s = Y_t + int_t^s f dr + int_t^s <Z, dW> - Y_s`.
#[derive(Debug, Clone)]
pub struct MonotoneResidual {
    paths: usize,
    steps: usize,
    /// `paths x (steps + 1)`, zero at node 0.
    pub process: Vec<f64>,
    pub direction: Monotonicity,
}

impl MonotoneResidual {
    pub fn at(&self, path: usize, step: usize) -> f64 {
        self.process[path * (self.steps + 1) + step]
    }

    pub fn paths(&self) -> usize {
        self.paths
    }
}

#[derive(Debug, Clone)]
pub struct SupersolutionReport {
    pub residual: MonotoneResidual,
    pub tolerance: f64,
    /// Smallest increment of `I` over all paths and steps.
    pub min_increment: f64,
    pub max_increment: f64,
    /// The candidate is a supersolution (increasing `I`).
    pub holds: bool,
}

/// Default monotonicity slack `10 dt L_f scale`, with `scale = 1 + max |Y|`.
pub fn default_residual_tolerance(dt: f64, lipschitz: f64, y: &[f64]) -> f64 {
    let scale = 1.0 + y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    10.0 * dt * lipschitz * scale + 1e-12 * scale
}

/// Builds `I` for a candidate `(y, z)` and classifies its monotonicity.
/// `tolerance = None` uses [`default_residual_tolerance`].
pub fn supersolution_residual(
    y: &[f64],
    z: &[f64],
    driver: &DriverSpec,
    ensemble: &PathEnsemble,
    tolerance: Option<f64>,
) -> Result<SupersolutionReport> {
    let paths = ensemble.paths();
    let steps = ensemble.steps();
    let d_xi = ensemble.noise_dim();
    let width = steps + 1;
    check_dim("candidate y", paths * width, y.len())?;
    check_dim("candidate z", paths * steps * d_xi, z.len())?;
    let dt = ensemble.grid().dt();
    let grid = *ensemble.grid();
    let tol = tolerance.unwrap_or_else(|| default_residual_tolerance(dt, driver.lipschitz(), y));

    let mut process = vec![0.0; paths * width];
    let extremes: Vec<(f64, f64)> = process
        .par_chunks_mut(width)
        .enumerate()
        .map(|(m, row)| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..steps {
                let zm = &z[(m * steps + i) * d_xi..(m * steps + i + 1) * d_xi];
                let yi = y[m * width + i];
                let ito: f64 = zm
                    .iter()
                    .zip(ensemble.increment(m, i))
                    .map(|(a, b)| a * b)
                    .sum();
                let inc = driver.eval(grid.time(i), ensemble.state(m, i), yi, zm) * dt + ito
                    - (y[m * width + i + 1] - yi);
                row[i + 1] = row[i] + inc;
                lo = lo.min(inc);
                hi = hi.max(inc);
            }
            (lo, hi)
        })
        .collect();
    let min_increment = extremes.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let max_increment = extremes
        .iter()
        .map(|e| e.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let increasing = min_increment >= -tol;
    let decreasing = max_increment <= tol;
    let direction = match (increasing, decreasing) {
        (true, true) => Monotonicity::Constant,
        (true, false) => Monotonicity::Increasing,
        (false, true) => Monotonicity::Decreasing,
        (false, false) => Monotonicity::Neither,
    };
    Ok(SupersolutionReport {
        residual: MonotoneResidual {
            paths,
            steps,
            process,
            direction,
        },
        tolerance: tol,
        min_increment,
        max_increment,
        holds: increasing,
    })
}

/// Left and right sides of an energy estimate, with their ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub constant: f64,
    pub holds: bool,
}

fn estimate_report(lhs: &[f64], rhs: &[f64], constant: f64) -> EstimateReport {
    let l = mean_stderr(lhs);
    let r = mean_stderr(rhs).mean;
    let ratio = if r > 0.0 {
        l.mean / r
    } else if l.mean.abs() <= 1e-14 {
        0.0
    } else {
        f64::INFINITY
    };
    EstimateReport {
        lhs: l.mean,
        lhs_stderr: l.stderr,
        rhs: r,
        ratio,
        constant,
        holds: ratio <= constant,
    }
}

/// `E[sup |Y|^2 + int |Z|^2]` against `E[|eta|^2 + (int |f(s, X, 0, 0)| ds)^2]`.
pub fn apriori_check(
    driver: &DriverSpec,
    terminal: &TerminalFunctional,
    ensemble: &PathEnsemble,
    solution: &BsdeSolution,
    constant: f64,
) -> Result<EstimateReport> {
    check_dim("solution paths", ensemble.paths(), solution.paths())?;
    check_dim("solution steps", ensemble.steps(), solution.steps())?;
    let steps = ensemble.steps();
    let dt = ensemble.grid().dt();
    let grid = *ensemble.grid();
    let zero_z = vec![0.0; ensemble.noise_dim()];
    let sides: Vec<(f64, f64)> = (0..ensemble.paths())
        .into_par_iter()
        .map(|m| {
            let mut sup: f64 = 0.0;
            let mut zint = 0.0;
            let mut fint = 0.0;
            for i in 0..steps {
                sup = sup.max(solution.y_at(m, i).powi(2));
                zint += solution.z_at(m, i).iter().map(|v| v * v).sum::<f64>() * dt;
                fint += driver
                    .eval(grid.time(i), ensemble.state(m, i), 0.0, &zero_z)
                    .abs()
                    * dt;
            }
            sup = sup.max(solution.y_at(m, steps).powi(2));
            let eta = terminal.eval(ensemble.terminal(m));
            (sup + zint, eta * eta + fint * fint)
        })
        .collect();
    let lhs: Vec<f64> = sides.iter().map(|s| s.0).collect();
    let rhs: Vec<f64> = sides.iter().map(|s| s.1).collect();
    Ok(estimate_report(&lhs, &rhs, constant))
}

/// `E[sup |Y^1 - Y^2|^2 + int |Z^1 - Z^2|^2]` against
/// `E[|eta^1 - eta^2|^2 + (int |f^1 - f^2|(Y^1, Z^1) dr)^2]`, both problems on
/// the same ensemble.
pub fn stability_check(
    first: BsdePair<'_>,
    second: BsdePair<'_>,
    ensemble: &PathEnsemble,
    basis: &RegressionBasis,
    picard_iters: usize,
    constant: f64,
) -> Result<EstimateReport> {
    let (s1, s2) = solve_pair(first, second, ensemble, basis, picard_iters)?;
    let steps = ensemble.steps();
    let dt = ensemble.grid().dt();
    let grid = *ensemble.grid();
    let sides: Vec<(f64, f64)> = (0..ensemble.paths())
        .into_par_iter()
        .map(|m| {
            let mut sup: f64 = 0.0;
            let mut zint = 0.0;
            let mut fint = 0.0;
            for i in 0..steps {
                sup = sup.max((s1.y_at(m, i) - s2.y_at(m, i)).powi(2));
                zint += s1
                    .z_at(m, i)
                    .iter()
                    .zip(s2.z_at(m, i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    * dt;
                let (t, x) = (grid.time(i), ensemble.state(m, i));
                let (y1, z1) = (s1.y_at(m, i), s1.z_at(m, i));
                fint +=
                    (first.driver.eval(t, x, y1, z1) - second.driver.eval(t, x, y1, z1)).abs() * dt;
            }
            sup = sup.max((s1.y_at(m, steps) - s2.y_at(m, steps)).powi(2));
            let xt = ensemble.terminal(m);
            let deta = first.terminal.eval(xt) - second.terminal.eval(xt);
            (sup + zint, deta * deta + fint * fint)
        })
        .collect();
    let lhs: Vec<f64> = sides.iter().map(|s| s.0).collect();
    let rhs: Vec<f64> = sides.iter().map(|s| s.1).collect();
    Ok(estimate_report(&lhs, &rhs, constant))
}
