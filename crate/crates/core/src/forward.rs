//! Forward SPDE simulation with the exponential Euler scheme
//! `X_{i+1} = S(dt) [X_i + b(t_i, X_i) dt + sigma(t_i, X_i) dW_i]`,
//! plus the stability probes for the forward flow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::error::{check_dim, FkError, Result};
use crate::rng::RngPolicy;
use crate::spectral::{norm_h, BCondition, BWeight, DiagonalGenerator, NoiseModel, SpectralVector};
use crate::stats::{mean_stderr, MeanEstimate};

/// Uniform grid `t = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || !(start < end) {
            return Err(FkError::InvalidInput {
                field: "time grid",
                reason: format!("need 0 <= t < T < inf, got t={start}, T={end}"),
            });
        }
        if steps == 0 {
            return Err(FkError::InvalidInput {
                field: "time grid",
                reason: "need at least one step".into(),
            });
        }
        Ok(Self { start, end, steps })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.end
        } else {
            self.start + i as f64 * self.dt()
        }
    }

    /// Grid index of `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = (t - self.start) / self.dt();
        let idx = pos.round();
        if idx < 0.0 || idx > self.steps as f64 || (pos - idx).abs() > 1e-9 {
            None
        } else {
            Some(idx as usize)
        }
    }

    /// The same grid restricted to `[t_offset, T]`.
    pub fn tail(&self, offset: usize) -> Result<Self> {
        if offset >= self.steps {
            return Err(FkError::GridMisalignment(format!(
                "offset {offset} leaves no steps on a grid of {}",
                self.steps
            )));
        }
        Ok(Self {
            start: self.time(offset),
            end: self.end,
            steps: self.steps - offset,
        })
    }
}

/// Gaussian increments of the truncated cylindrical Wiener process, laid out
/// path-major as `paths x steps x d_xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    paths: usize,
    steps: usize,
    d_xi: usize,
    seed: u64,
    data: Vec<f64>,
}

impl Increments {
    pub fn from_raw(
        paths: usize,
        steps: usize,
        d_xi: usize,
        seed: u64,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_dim("increments", paths * steps * d_xi, data.len())?;
        Ok(Self {
            paths,
            steps,
            d_xi,
            seed,
            data,
        })
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn d_xi(&self) -> usize {
        self.d_xi
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * self.steps + step) * self.d_xi;
        &self.data[start..start + self.d_xi]
    }

    /// Increments of steps `offset..`, for runs started later on the same grid.
    pub fn tail(&self, offset: usize) -> Self {
        let steps = self.steps - offset;
        let mut data = Vec::with_capacity(self.paths * steps * self.d_xi);
        for m in 0..self.paths {
            let start = (m * self.steps + offset) * self.d_xi;
            let end = (m + 1) * self.steps * self.d_xi;
            data.extend_from_slice(&self.data[start..end]);
        }
        Self {
            paths: self.paths,
            steps,
            d_xi: self.d_xi,
            seed: self.seed,
            data,
        }
    }

    /// Sums groups of `factor` consecutive increments: the same Brownian paths
    /// seen on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(FkError::GridMisalignment(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut data = vec![0.0; self.paths * steps * self.d_xi];
        for m in 0..self.paths {
            for i in 0..self.steps {
                let src = self.get(m, i);
                let dst = (m * steps + i / factor) * self.d_xi;
                for (k, v) in src.iter().enumerate() {
                    data[dst + k] += v;
                }
            }
        }
        Ok(Self {
            paths: self.paths,
            steps,
            d_xi: self.d_xi,
            seed: self.seed,
            data,
        })
    }
}

/// Draws i.i.d. `N(0, dt)` increments; reproducible under `rng`.
pub fn sample_increments(
    grid: &TimeGrid,
    paths: usize,
    noise: &NoiseModel,
    rng: &RngPolicy,
) -> Increments {
    let steps = grid.steps();
    let d_xi = noise.dim();
    let sqrt_dt = grid.dt().sqrt();
    let mut data = vec![0.0; paths * steps * d_xi];
    data.par_chunks_mut(steps * d_xi)
        .enumerate()
        .for_each(|(m, row)| {
            let mut stream = rng.path_stream(m);
            for v in row.iter_mut() {
                *v = sqrt_dt * stream.standard_normal();
            }
        });
    Increments {
        paths,
        steps,
        d_xi,
        seed: rng.seed,
        data,
    }
}

/// Simulated paths together with the noise that drove them.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>,
    increments: Increments,
}

impl PathEnsemble {
    pub fn from_raw(
        grid: TimeGrid,
        dim: usize,
        states: Vec<f64>,
        increments: Increments,
    ) -> Result<Self> {
        check_dim(
            "ensemble states",
            increments.paths() * (grid.steps() + 1) * dim,
            states.len(),
        )?;
        check_dim("ensemble steps", grid.steps(), increments.steps())?;
        Ok(Self {
            grid,
            dim,
            states,
            increments,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.increments.paths
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.increments.d_xi
    }

    pub fn seed(&self) -> u64 {
        self.increments.seed
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn increments(&self) -> &Increments {
        &self.increments
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * (self.grid.steps() + 1) + step) * self.dim;
        &self.states[start..start + self.dim]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.grid.steps())
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        self.increments.get(path, step)
    }
}

/// Runs the exponential Euler scheme from `x0` along the supplied increments.
pub fn simulate_ensemble(
    generator: &DiagonalGenerator,
    coeffs: &CoefficientField,
    grid: &TimeGrid,
    x0: &SpectralVector,
    increments: &Increments,
) -> Result<PathEnsemble> {
    let d = generator.dim();
    check_dim("initial state", d, x0.dim())?;
    check_dim("increment steps", grid.steps(), increments.steps())?;
    let steps = grid.steps();
    let dt = grid.dt();
    let factors = generator.semigroup_factors(dt);
    let mut states = vec![0.0; increments.paths() * (steps + 1) * d];

    let failures: Vec<Option<(usize, usize)>> = states
        .par_chunks_mut((steps + 1) * d)
        .enumerate()
        .map(|(m, row)| {
            row[..d].copy_from_slice(x0.coeffs());
            let mut drift = vec![0.0; d];
            for i in 0..steps {
                let t = grid.time(i);
                let (done, rest) = row.split_at_mut((i + 1) * d);
                let x = &done[i * d..];
                let next = &mut rest[..d];
                coeffs.drift_into(t, x, &mut drift);
                for k in 0..d {
                    next[k] = x[k] + drift[k] * dt;
                }
                coeffs.add_diffusion(t, x, increments.get(m, i), next);
                for k in 0..d {
                    next[k] *= factors[k];
                }
                if next.iter().any(|v| !v.is_finite()) {
                    return Some((m, i + 1));
                }
            }
            None
        })
        .collect();
    if let Some((path, step)) = failures.into_iter().flatten().next() {
        return Err(FkError::Simulation { path, step });
    }
    Ok(PathEnsemble {
        grid: *grid,
        dim: d,
        states,
        increments: increments.clone(),
    })
}

/// The forward half of a problem: generator, `B`, noise truncation and coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub generator: DiagonalGenerator,
    pub bweight: BWeight,
    pub noise: NoiseModel,
    pub coeffs: CoefficientField,
}

/// Seed of the construction-time Lipschitz audit.
const AUDIT_SEED: u64 = 0x5eed_a0d1;

impl ForwardModel {
    /// Validates dimensions, the strong B-condition and the coefficient declarations.
    pub fn new(
        generator: DiagonalGenerator,
        bweight: BWeight,
        noise: NoiseModel,
        coeffs: CoefficientField,
    ) -> Result<Self> {
        check_dim("B weights", generator.dim(), bweight.dim())?;
        if let BCondition::Violated { mode, value } = bweight.strong_b_check(&generator)? {
            return Err(FkError::StrongBCondition { mode, value });
        }
        coeffs.audit(generator.dim(), noise.dim(), &bweight, AUDIT_SEED)?;
        Ok(Self {
            generator,
            bweight,
            noise,
            coeffs,
        })
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise.dim()
    }

    pub fn simulate(
        &self,
        grid: &TimeGrid,
        x0: &SpectralVector,
        increments: &Increments,
    ) -> Result<PathEnsemble> {
        check_dim("noise dimension", self.noise_dim(), increments.d_xi())?;
        simulate_ensemble(&self.generator, &self.coeffs, grid, x0, increments)
    }

    /// Samples fresh increments and simulates.
    pub fn simulate_seeded(
        &self,
        grid: &TimeGrid,
        x0: &SpectralVector,
        paths: usize,
        seed: u64,
    ) -> Result<PathEnsemble> {
        let inc = sample_increments(grid, paths, &self.noise, &RngPolicy::new(seed));
        self.simulate(grid, x0, &inc)
    }
}

/// Estimates of the two left-hand sides of the forward stability bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardStabilityReport {
    /// `<B(x - x'), x - x'>`.
    pub initial_hm1_sq: f64,
    /// `E[|X_T - X'_T|^2_{H_{-1}} + int |X_s - X'_s|^2_H ds]`.
    pub lhs_weak: f64,
    pub lhs_weak_stderr: f64,
    /// `E[|X_T - X'_T|^2_H]`.
    pub lhs_strong: f64,
    pub lhs_strong_stderr: f64,
    pub ratio_weak: f64,
    pub ratio_strong: f64,
}

/// Couples runs from `x` and `x_prime` through common increments and
/// measures how far apart they end up, relative to `|x - x'|^2_{H_{-1}}`.
pub fn forward_stability_probe(
    model: &ForwardModel,
    grid: &TimeGrid,
    x: &SpectralVector,
    x_prime: &SpectralVector,
    paths: usize,
    seed: u64,
) -> Result<ForwardStabilityReport> {
    let diff0 = x.sub(x_prime)?;
    let initial_hm1_sq = model.bweight.norm_hm1_sq(&diff0)?;
    let inc = sample_increments(grid, paths, &model.noise, &RngPolicy::new(seed));
    let a = model.simulate(grid, x, &inc)?;
    let b = model.simulate(grid, x_prime, &inc)?;
    let steps = grid.steps();
    let dt = grid.dt();
    let d = model.dim();

    let per_path: Vec<(f64, f64)> = (0..paths)
        .into_par_iter()
        .map(|m| {
            let mut diff = vec![0.0; d];
            let mut integral = 0.0;
            for i in 0..steps {
                for (dk, (ak, bk)) in diff.iter_mut().zip(a.state(m, i).iter().zip(b.state(m, i))) {
                    *dk = ak - bk;
                }
                let n = norm_h(&diff);
                integral += n * n * dt;
            }
            for (dk, (ak, bk)) in diff.iter_mut().zip(a.terminal(m).iter().zip(b.terminal(m))) {
                *dk = ak - bk;
            }
            let term_h = norm_h(&diff).powi(2);
            let term_hm1 = model.bweight.norm_hm1_sq_slice(&diff);
            (term_hm1 + integral, term_h)
        })
        .collect();
    let weak: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let strong: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let w = mean_stderr(&weak);
    let s = mean_stderr(&strong);
    let ratio = |v: f64| {
        if initial_hm1_sq > 0.0 {
            v / initial_hm1_sq
        } else {
            0.0
        }
    };
    Ok(ForwardStabilityReport {
        initial_hm1_sq,
        lhs_weak: w.mean,
        lhs_weak_stderr: w.stderr,
        lhs_strong: s.mean,
        lhs_strong_stderr: s.stderr,
        ratio_weak: ratio(w.mean),
        ratio_strong: ratio(s.mean),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityRow {
    pub t_start: f64,
    pub sup_error: f64,
    pub stderr: f64,
}

/// `E[sup_{s in [t_n, T]} |X^{t_n,x}_s - X^{t,x}_s|^2_H]` for each later start `t_n`.
///
/// Both runs share the increments of `grid` on their overlap, so each `t_n`
/// must be a grid node.
pub fn time_continuity_probe(
    model: &ForwardModel,
    x: &SpectralVector,
    grid: &TimeGrid,
    starts: &[f64],
    paths: usize,
    seed: u64,
) -> Result<Vec<ContinuityRow>> {
    let inc = sample_increments(grid, paths, &model.noise, &RngPolicy::new(seed));
    let base = model.simulate(grid, x, &inc)?;
    let d = model.dim();
    let mut rows = Vec::with_capacity(starts.len());
    for &tn in starts {
        let offset = grid.index_of(tn).ok_or_else(|| {
            FkError::GridMisalignment(format!("start time {tn} is not a node of the base grid"))
        })?;
        if offset == grid.steps() {
            return Err(FkError::GridMisalignment(format!(
                "start time {tn} must be before T"
            )));
        }
        if offset == 0 {
            rows.push(ContinuityRow {
                t_start: tn,
                sup_error: 0.0,
                stderr: 0.0,
            });
            continue;
        }
        let late = model.simulate(&grid.tail(offset)?, x, &inc.tail(offset))?;
        let sups: Vec<f64> = (0..paths)
            .into_par_iter()
            .map(|m| {
                let mut sup: f64 = 0.0;
                let mut diff = vec![0.0; d];
                for j in 0..=late.steps() {
                    for (dk, (lk, bk)) in diff
                        .iter_mut()
                        .zip(late.state(m, j).iter().zip(base.state(m, j + offset)))
                    {
                        *dk = lk - bk;
                    }
                    sup = sup.max(norm_h(&diff).powi(2));
                }
                sup
            })
            .collect();
        let MeanEstimate { mean, stderr, .. } = mean_stderr(&sups);
        rows.push(ContinuityRow {
            t_start: tn,
            sup_error: mean,
            stderr,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    fn ou_model() -> ForwardModel {
        let g = DiagonalGenerator::new(vec![1.0]).unwrap();
        ForwardModel::new(
            g.clone(),
            BWeight::canonical(&g),
            NoiseModel::new(1).unwrap(),
            CoefficientField::constant_sigma(1.0),
        )
        .unwrap()
    }

    #[test]
    fn grid_validation_and_lookup() {
        assert!(TimeGrid::new(0.5, 0.5, 1).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        assert_eq!(g.index_of(0.3), Some(3));
        assert_eq!(g.index_of(0.35), None);
        assert_eq!(g.time(10), 1.0);
        let tiny = TimeGrid::new(0.0, 1e-12, 1).unwrap();
        assert!(tiny.dt() > 0.0);
    }

    #[test]
    fn single_draw_is_deterministic() {
        let noise = NoiseModel::new(1).unwrap();
        let a = sample_increments(&grid(1), 1, &noise, &RngPolicy::new(99));
        let b = sample_increments(&grid(1), 1, &noise, &RngPolicy::new(99));
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
        let two = sample_increments(&grid(1), 2, &noise, &RngPolicy::new(99));
        assert_ne!(two.get(0, 0)[0], two.get(1, 0)[0]);
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let g = DiagonalGenerator::zero(3);
        let x0 = SpectralVector::new(vec![0.3, -1.0, 2.0]).unwrap();
        let inc = sample_increments(
            &grid(7),
            5,
            &NoiseModel::new(2).unwrap(),
            &RngPolicy::new(1),
        );
        let e = simulate_ensemble(&g, &CoefficientField::zero(), &grid(7), &x0, &inc).unwrap();
        for m in 0..5 {
            for i in 0..=7 {
                assert_eq!(e.state(m, i), x0.coeffs());
            }
        }
    }

    #[test]
    fn pure_semigroup_flow() {
        let g = DiagonalGenerator::new(vec![1.0]).unwrap();
        let x0 = SpectralVector::new(vec![1.0]).unwrap();
        let inc = sample_increments(
            &grid(20),
            2,
            &NoiseModel::new(1).unwrap(),
            &RngPolicy::new(1),
        );
        let e = simulate_ensemble(&g, &CoefficientField::zero(), &grid(20), &x0, &inc).unwrap();
        assert!((e.terminal(0)[0] - (-1f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn overflow_is_reported() {
        let g = DiagonalGenerator::zero(1);
        let x0 = SpectralVector::new(vec![1.0]).unwrap();
        let inc = sample_increments(
            &grid(2000),
            1,
            &NoiseModel::new(1).unwrap(),
            &RngPolicy::new(1),
        );
        let c = CoefficientField::affine(2000.0, 0.0, 0.0);
        match simulate_ensemble(&g, &c, &grid(2000), &x0, &inc) {
            Err(FkError::Simulation { path: 0, .. }) => {}
            other => panic!("expected simulation error, got {other:?}"),
        }
    }

    #[test]
    fn coarsen_preserves_sums() {
        let inc = sample_increments(
            &grid(8),
            3,
            &NoiseModel::new(2).unwrap(),
            &RngPolicy::new(5),
        );
        let c = inc.coarsen(4).unwrap();
        assert_eq!(c.steps(), 2);
        let direct: f64 = (0..4).map(|i| inc.get(1, i)[1]).sum();
        assert!((c.get(1, 0)[1] - direct).abs() < 1e-15);
        assert!(inc.coarsen(3).is_err());
    }

    #[test]
    fn stability_probe_zero_shift() {
        let m = ou_model();
        let x = SpectralVector::new(vec![0.5]).unwrap();
        let r = forward_stability_probe(&m, &grid(10), &x, &x, 100, 3).unwrap();
        assert_eq!(r.lhs_weak, 0.0);
        assert_eq!(r.lhs_strong, 0.0);
    }

    #[test]
    fn continuity_rejects_off_grid_start() {
        let m = ou_model();
        let x = SpectralVector::new(vec![0.5]).unwrap();
        assert!(matches!(
            time_continuity_probe(&m, &x, &grid(10), &[0.15], 10, 1),
            Err(FkError::GridMisalignment(_))
        ));
        let rows = time_continuity_probe(&m, &x, &grid(10), &[0.0], 10, 1).unwrap();
        assert_eq!(rows[0].sup_error, 0.0);
    }

    #[test]
    fn model_rejects_b_violation() {
        let g = DiagonalGenerator::zero(1);
        let err = ForwardModel::new(
            g,
            BWeight::new(vec![1.0], 0.0).unwrap(),
            NoiseModel::new(1).unwrap(),
            CoefficientField::zero(),
        )
        .unwrap_err();
        assert!(matches!(err, FkError::StrongBCondition { mode: 1, .. }));
    }
}
