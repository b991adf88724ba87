//! One-dimensional deterministic reference solver and closed-form solutions.
//!
//! Solves `v_t + (-lambda x + b(x)) v_x + sigma^2/2 v_xx - f(t, x, v, sigma v_x) = 0`,
//! `v(T, .) = g`, backward in time with Crank-Nicolson and centred differences.
//! The nonlinearity is handled by Picard sweeps inside each step.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientField, Diffusion, Drift};
use crate::error::{FkError, Result};
use crate::forward::ForwardModel;
use crate::functional::{DriverSpec, TerminalFunctional};

pub const PICARD_MAX_SWEEPS: usize = 5;
pub const PICARD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    /// Spatial nodes, boundaries included.
    pub points: usize,
    pub time_steps: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl Grid1D {
    pub fn new(
        x_min: f64,
        x_max: f64,
        points: usize,
        time_steps: usize,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self> {
        if !(x_min < x_max) || points < 3 {
            return Err(FkError::InvalidInput {
                field: "fd grid",
                reason: format!("need x_min < x_max and at least 3 points, got [{x_min}, {x_max}] with {points}"),
            });
        }
        if time_steps == 0 || !(t_start < t_end) {
            return Err(FkError::InvalidInput {
                field: "fd grid",
                reason: "need at least one time step and t_start < t_end".into(),
            });
        }
        Ok(Self {
            x_min,
            x_max,
            points,
            time_steps,
            t_start,
            t_end,
        })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.points - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.time_steps as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn t(&self, n: usize) -> f64 {
        if n == self.time_steps {
            self.t_end
        } else {
            self.t_start + n as f64 * self.dt()
        }
    }
}

/// Coefficients the reference solver supports: diagonal decay, any scalar
/// drift preset and constant volatility.
#[derive(Debug, Clone, PartialEq)]
pub struct FdModel {
    pub lambda: f64,
    pub drift: Drift,
    pub sigma: f64,
}

impl FdModel {
    pub fn from_forward(model: &ForwardModel) -> Result<Self> {
        if model.dim() != 1 || model.noise_dim() != 1 {
            return Err(FkError::OracleDomain(format!(
                "reference solver needs d = d_xi = 1, got d = {}, d_xi = {}",
                model.dim(),
                model.noise_dim()
            )));
        }
        Self::from_parts(model.generator.lambdas()[0], &model.coeffs)
    }

    pub fn from_parts(lambda: f64, coeffs: &CoefficientField) -> Result<Self> {
        let sigma = match &coeffs.diffusion {
            Diffusion::Zero => 0.0,
            Diffusion::Constant { q } => *q,
            Diffusion::Multiplicative { gamma, q, .. } if *gamma == 0.0 => *q,
            Diffusion::Multiplicative { .. } => {
                return Err(FkError::OracleDomain(
                    "state-dependent diffusion is not supported by the reference solver".into(),
                ))
            }
        };
        if sigma == 0.0 {
            return Err(FkError::OracleDomain(
                "reference solver needs sigma != 0".into(),
            ));
        }
        Ok(Self {
            lambda,
            drift: coeffs.drift.clone(),
            sigma,
        })
    }

    fn advection(&self, x: f64) -> f64 {
        let b = match self.drift {
            Drift::Zero => 0.0,
            Drift::NemytskiiSine { beta } => beta * x.sin(),
            Drift::Affine { kappa, shift } => kappa * x + shift,
        };
        -self.lambda * x + b
    }
}

/// Values on the space-time grid, row `n` at time `grid.t(n)`.
#[derive(Debug, Clone)]
pub struct FdSolution {
    pub grid: Grid1D,
    /// `(time_steps + 1) x points`, row-major.
    pub values: Vec<f64>,
}

impl FdSolution {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.grid.points..(n + 1) * self.grid.points]
    }

    /// Bilinear interpolation in `(t, x)`.
    pub fn value_at(&self, t: f64, x: f64) -> Result<f64> {
        let g = &self.grid;
        if t < g.t_start - 1e-12 || t > g.t_end + 1e-12 || x < g.x_min || x > g.x_max {
            return Err(FkError::OracleDomain(format!(
                "({t}, {x}) outside the solved region"
            )));
        }
        let tn = ((t - g.t_start) / g.dt()).clamp(0.0, g.time_steps as f64);
        let n0 = (tn.floor() as usize).min(g.time_steps - 1);
        let wt = tn - n0 as f64;
        let xj = ((x - g.x_min) / g.dx()).clamp(0.0, (g.points - 1) as f64);
        let j0 = (xj.floor() as usize).min(g.points - 2);
        let wx = xj - j0 as f64;
        let at = |n: usize| {
            let r = self.row(n);
            r[j0] * (1.0 - wx) + r[j0 + 1] * wx
        };
        Ok(at(n0) * (1.0 - wt) + at(n0 + 1) * wt)
    }

    /// CSV with columns `t,x,v`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,v")?;
        for n in 0..=self.grid.time_steps {
            for (j, v) in self.row(n).iter().enumerate() {
                writeln!(w, "{},{},{}", self.grid.t(n), self.grid.x(j), v)?;
            }
        }
        Ok(())
    }
}

/// Backward Crank-Nicolson solve with Dirichlet boundaries.
///
/// Boundary nodes follow `g` transported by the linear decay, corrected by the
/// driver along the boundary with `z = 0`.
pub fn solve_semilinear_fd(
    model: &FdModel,
    driver: &DriverSpec,
    terminal: &TerminalFunctional,
    grid: &Grid1D,
) -> Result<FdSolution> {
    let j_len = grid.points;
    let dt = grid.dt();
    let h = grid.dx();
    let xs: Vec<f64> = (0..j_len).map(|j| grid.x(j)).collect();
    let half_var = 0.5 * model.sigma * model.sigma;
    // L v_j = lo_j v_{j-1} + di_j v_j + up_j v_{j+1}
    let mut lo = vec![0.0; j_len];
    let mut di = vec![0.0; j_len];
    let mut up = vec![0.0; j_len];
    for j in 1..j_len - 1 {
        let mu = model.advection(xs[j]);
        lo[j] = half_var / (h * h) - mu / (2.0 * h);
        di[j] = -2.0 * half_var / (h * h);
        up[j] = half_var / (h * h) + mu / (2.0 * h);
    }
    let apply_l = |v: &[f64], j: usize| lo[j] * v[j - 1] + di[j] * v[j] + up[j] * v[j + 1];
    let forcing = |t: f64, v: &[f64], out: &mut [f64]| {
        for j in 1..j_len - 1 {
            let z = model.sigma * (v[j + 1] - v[j - 1]) / (2.0 * h);
            out[j] = driver.eval(t, &[xs[j]], v[j], &[z]);
        }
    };
    let flowed_g = |t: f64, x: f64| terminal.eval(&[(-model.lambda * (grid.t_end - t)).exp() * x]);
    let nonlinear = driver_depends_on_solution(driver);

    let steps = grid.time_steps;
    let mut values = vec![0.0; (steps + 1) * j_len];
    for (j, x) in xs.iter().enumerate() {
        values[steps * j_len + j] = terminal.eval(&[*x]);
    }
    let mut f_next = vec![0.0; j_len];
    let mut f_cur = vec![0.0; j_len];
    let mut rhs = vec![0.0; j_len];
    let mut iterate = vec![0.0; j_len];
    let mut solved = vec![0.0; j_len];

    for n in (0..steps).rev() {
        let (t_now, t_next) = (grid.t(n), grid.t(n + 1));
        let next = values[(n + 1) * j_len..(n + 2) * j_len].to_vec();
        forcing(t_next, &next, &mut f_next);

        let mut boundary = [0.0; 2];
        for (slot, j) in [0usize, j_len - 1].into_iter().enumerate() {
            let drift_next = driver.eval(t_next, &[xs[j]], next[j], &[0.0]);
            let carried = next[j] + flowed_g(t_now, xs[j]) - flowed_g(t_next, xs[j]);
            let mut w = carried - dt * drift_next;
            for _ in 0..50 {
                let w_new =
                    carried - 0.5 * dt * (driver.eval(t_now, &[xs[j]], w, &[0.0]) + drift_next);
                let done = (w_new - w).abs() <= PICARD_TOLERANCE;
                w = w_new;
                if done {
                    break;
                }
            }
            boundary[slot] = w;
        }

        // Explicit predictor as the starting iterate.
        iterate.copy_from_slice(&next);
        for j in 1..j_len - 1 {
            iterate[j] = next[j] + dt * (apply_l(&next, j) - f_next[j]);
        }
        iterate[0] = boundary[0];
        iterate[j_len - 1] = boundary[1];

        let sweeps = if nonlinear { PICARD_MAX_SWEEPS } else { 1 };
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..sweeps {
            forcing(t_now, &iterate, &mut f_cur);
            for j in 1..j_len - 1 {
                rhs[j] = next[j] + 0.5 * dt * apply_l(&next, j) - 0.5 * dt * (f_cur[j] + f_next[j]);
            }
            solve_tridiagonal(&lo, &di, &up, dt, &rhs, boundary, &mut solved);
            residual = solved
                .iter()
                .zip(&iterate)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            iterate.copy_from_slice(&solved);
            if !nonlinear || residual <= PICARD_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(FkError::PicardDivergence { step: n, residual });
        }
        if iterate.iter().any(|v| !v.is_finite()) {
            return Err(FkError::PicardDivergence {
                step: n,
                residual: f64::NAN,
            });
        }
        values[n * j_len..(n + 1) * j_len].copy_from_slice(&iterate);
    }
    Ok(FdSolution {
        grid: *grid,
        values,
    })
}

fn driver_depends_on_solution(driver: &DriverSpec) -> bool {
    match driver {
        DriverSpec::Zero => false,
        DriverSpec::Linear(l) => l.a0 != 0.0 || l.a1 != 0.0 || l.c.iter().any(|c| *c != 0.0),
        DriverSpec::Shifted { base, .. } => driver_depends_on_solution(base),
        _ => true,
    }
}

/// Solves `(I - dt/2 L) v = rhs` on the interior with Dirichlet values `boundary`.
fn solve_tridiagonal(
    lo: &[f64],
    di: &[f64],
    up: &[f64],
    dt: f64,
    rhs: &[f64],
    boundary: [f64; 2],
    out: &mut [f64],
) {
    let n = out.len();
    let m = n - 2;
    let mut c_prime = vec![0.0; m];
    let mut d_prime = vec![0.0; m];
    for k in 0..m {
        let j = k + 1;
        let a = -0.5 * dt * lo[j];
        let b = 1.0 - 0.5 * dt * di[j];
        let c = -0.5 * dt * up[j];
        let mut d = rhs[j];
        if j == 1 {
            d -= a * boundary[0];
        }
        if j == n - 2 {
            d -= c * boundary[1];
        }
        if k == 0 {
            c_prime[k] = c / b;
            d_prime[k] = d / b;
        } else {
            let denom = b - a * c_prime[k - 1];
            c_prime[k] = c / denom;
            d_prime[k] = (d - a * d_prime[k - 1]) / denom;
        }
    }
    out[0] = boundary[0];
    out[n - 1] = boundary[1];
    out[m] = d_prime[m - 1];
    for k in (0..m - 1).rev() {
        out[k + 1] = d_prime[k] - c_prime[k] * out[k + 2];
    }
}

/// Registry of exact solutions used as references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedForm {
    /// `E[(x + sigma W_{T-t})^2] = x^2 + sigma^2 (T - t)`
    GaussianMoment { sigma: f64, horizon: f64 },
    /// `exp(-lambda (T - t)) x`
    OuMean { lambda: f64, horizon: f64 },
    /// `sigma^2 (1 - exp(-2 lambda (T - t))) / (2 lambda)`
    OuVar {
        lambda: f64,
        sigma: f64,
        horizon: f64,
    },
    /// `kappa exp(-rho (T - t))`
    LinearDecay { rho: f64, kappa: f64, horizon: f64 },
    /// `exp(-sigma^2 (T - t) / 2) sin(x)`
    HeatOfSine { sigma: f64, horizon: f64 },
}

impl ClosedForm {
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match *self {
            ClosedForm::GaussianMoment { sigma, horizon } => x * x + sigma * sigma * (horizon - t),
            ClosedForm::OuMean { lambda, horizon } => (-lambda * (horizon - t)).exp() * x,
            ClosedForm::OuVar {
                lambda,
                sigma,
                horizon,
            } => {
                let tau = horizon - t;
                if lambda == 0.0 {
                    sigma * sigma * tau
                } else {
                    sigma * sigma * (1.0 - (-2.0 * lambda * tau).exp()) / (2.0 * lambda)
                }
            }
            ClosedForm::LinearDecay {
                rho,
                kappa,
                horizon,
            } => kappa * (-rho * (horizon - t)).exp(),
            ClosedForm::HeatOfSine { sigma, horizon } => {
                (-0.5 * sigma * sigma * (horizon - t)).exp() * x.sin()
            }
        }
    }

    /// Looks a form up by tag. Missing parameters default to `sigma = 1`,
    /// `lambda = 1`, `rho = 1`, `kappa = 1`, `horizon = 1`.
    pub fn from_tag(tag: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let p = |k: &str| params.get(k).copied().unwrap_or(1.0);
        Ok(match tag {
            "gaussian_moment" => ClosedForm::GaussianMoment {
                sigma: p("sigma"),
                horizon: p("horizon"),
            },
            "ou_mean" => ClosedForm::OuMean {
                lambda: p("lambda"),
                horizon: p("horizon"),
            },
            "ou_var" => ClosedForm::OuVar {
                lambda: p("lambda"),
                sigma: p("sigma"),
                horizon: p("horizon"),
            },
            "linear_decay" => ClosedForm::LinearDecay {
                rho: p("rho"),
                kappa: p("kappa"),
                horizon: p("horizon"),
            },
            "heat_of_sine" => ClosedForm::HeatOfSine {
                sigma: p("sigma"),
                horizon: p("horizon"),
            },
            other => return Err(FkError::UnknownTag(other.to_string())),
        })
    }
}

pub fn closed_form(tag: &str, params: &BTreeMap<String, f64>, t: f64, x: f64) -> Result<f64> {
    Ok(ClosedForm::from_tag(tag, params)?.value(t, x))
}
