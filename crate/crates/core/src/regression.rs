//! Least-squares estimation of conditional expectations on polynomial features
//! of the leading spectral modes.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::forward::PathEnsemble;
use crate::stats::BLOCK;

/// Above this condition number the Gram matrix gets a ridge term.
pub const RIDGE_CONDITION: f64 = 1e8;
/// Above this condition number a regression is rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Ridge size relative to `trace(G) / F`.
pub const RIDGE_SCALE: f64 = 1e-10;

/// Total-degree polynomial basis on the first `modes` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: usize,
    pub modes: usize,
}

impl RegressionBasis {
    pub fn new(degree: usize, modes: usize) -> Self {
        Self { degree, modes }
    }

    /// Default: quadratic in the first `min(d, 4)` modes.
    pub fn default_for(dim: usize) -> Self {
        Self {
            degree: 2,
            modes: dim.min(4),
        }
    }

    pub fn constant() -> Self {
        Self {
            degree: 0,
            modes: 0,
        }
    }

    /// `C(m + p, p)` features, the constant included.
    pub fn feature_count(&self, modes: usize) -> usize {
        binomial(modes + self.degree, self.degree)
    }

    /// Exponent vectors of all monomials of total degree `<= degree` in `modes` variables,
    /// ordered by degree.
    pub fn exponents(&self, modes: usize) -> Vec<Vec<u32>> {
        let mut out = vec![vec![0u32; modes]];
        let mut frontier = out.clone();
        for _ in 0..self.degree {
            let mut next = Vec::new();
            for e in &frontier {
                // Raise only modes at or after the last nonzero one, so each monomial appears once.
                let last = e.iter().rposition(|&p| p > 0).unwrap_or(0);
                for k in last..modes {
                    let mut n = e.clone();
                    n[k] += 1;
                    next.push(n);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// Features of every path at grid node `step`.
    ///
    /// Coordinates are standardised by their cross-path mean and spread;
    /// coordinates with no spread carry no information and are dropped.
    pub fn design(&self, ensemble: &PathEnsemble, step: usize) -> Design {
        let dim = ensemble.dim();
        let mut slice = Vec::with_capacity(ensemble.paths() * dim);
        for p in 0..ensemble.paths() {
            slice.extend_from_slice(ensemble.state(p, step));
        }
        self.design_from_states(&slice, dim)
    }

    /// As [`RegressionBasis::design`], from the states of every path at one
    /// node stored contiguously, `dim` values per path.
    pub fn design_from_states(&self, states: &[f64], dim: usize) -> Design {
        let paths = states.len() / dim;
        let m = self.modes.min(dim);
        let mut centers = Vec::new();
        let mut scales = Vec::new();
        let mut active = Vec::new();
        for k in 0..m {
            let col: Vec<f64> = (0..paths).map(|p| states[p * dim + k]).collect();
            let e = crate::stats::mean_stderr(&col);
            let sd = e.stderr * (paths as f64).sqrt();
            if sd > 1e-12 * (1.0 + e.mean.abs()) {
                active.push(k);
                centers.push(e.mean);
                scales.push(sd);
            }
        }
        let exps = self.exponents(active.len());
        let f = exps.len();
        // Each monomial is its parent (one power lower in its last mode) times that mode.
        let parents: Vec<(usize, usize)> = exps
            .iter()
            .skip(1)
            .map(|e| {
                let k = e.iter().rposition(|&p| p > 0).unwrap_or(0);
                let mut parent = e.clone();
                parent[k] -= 1;
                let idx = exps.iter().position(|x| *x == parent).unwrap_or(0);
                (idx, k)
            })
            .collect();
        let mut features = vec![0.0; paths * f];
        features
            .par_chunks_mut(f)
            .enumerate()
            .with_min_len(1024)
            .for_each(|(p, row)| {
                let x = &states[p * dim..(p + 1) * dim];
                row[0] = 1.0;
                for (slot, &(parent, k)) in parents.iter().enumerate() {
                    let mode = active[k];
                    row[slot + 1] = row[parent] * ((x[mode] - centers[k]) / scales[k]);
                }
            });
        Design {
            paths,
            width: f,
            features,
            active_modes: active.into_iter().map(|k| k + 1).collect(),
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Feature matrix of one regression, `paths x width`, row-major.
#[derive(Debug, Clone)]
pub struct Design {
    paths: usize,
    width: usize,
    features: Vec<f64>,
    active_modes: Vec<usize>,
}

impl Design {
    /// Design with only the constant feature.
    pub fn constant(paths: usize) -> Self {
        Self {
            paths,
            width: 1,
            features: vec![1.0; paths],
            active_modes: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn active_modes(&self) -> &[usize] {
        &self.active_modes
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.features[path * self.width..(path + 1) * self.width]
    }

    pub fn is_constant(&self) -> bool {
        self.width == 1
    }
}

/// Least-squares coefficients for several right-hand sides sharing one design.
#[derive(Debug, Clone)]
pub struct Fit {
    /// `width x targets`, row-major.
    pub coefs: Vec<f64>,
    pub targets: usize,
}

impl Fit {
    pub fn predict(&self, design: &Design, path: usize, target: usize) -> f64 {
        design
            .row(path)
            .iter()
            .zip(self.coefs[target..].iter().step_by(self.targets))
            .map(|(phi, c)| phi * c)
            .sum()
    }

    pub fn coefficients(&self, target: usize) -> Vec<f64> {
        (0..self.coefs.len() / self.targets)
            .map(|j| self.coefs[j * self.targets + target])
            .collect()
    }
}

/// A factorised Gram matrix, reusable for any number of right-hand sides.
pub struct Projector {
    design: Design,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    pub condition: f64,
    pub ridged: bool,
}

impl Projector {
    /// Assembles and factorises `G = Phi^T Phi / n`.
    ///
    /// `step` only labels errors. A constant design skips the factorisation:
    /// its fit is the plain mean.
    pub fn new(design: Design, step: usize) -> Result<Self> {
        if design.is_constant() {
            return Ok(Self {
                design,
                chol: None,
                condition: 1.0,
                ridged: false,
            });
        }
        let (f, n) = (design.width, design.paths);
        let blocks: Vec<Vec<f64>> = (0..n.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![0.0; f * f];
                let rows = &design.features[b * BLOCK * f..((b + 1) * BLOCK).min(n) * f];
                for row in rows.chunks_exact(f) {
                    for (i, &ri) in row.iter().enumerate() {
                        for (a, &rj) in acc[i * f + i..(i + 1) * f].iter_mut().zip(&row[i..]) {
                            *a += ri * rj;
                        }
                    }
                }
                acc
            })
            .collect();
        let acc = sum_blocks(&blocks, f * f);
        let inv_n = 1.0 / n as f64;
        let mut gram = DMatrix::<f64>::zeros(f, f);
        for i in 0..f {
            for j in i..f {
                let v = acc[i * f + j] * inv_n;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(FkError::IllConditioned { step, condition });
        }
        let ridged = condition > RIDGE_CONDITION;
        if ridged {
            let jitter = RIDGE_SCALE * gram.trace() / f as f64;
            for i in 0..f {
                gram[(i, i)] += jitter;
            }
        }
        let chol = gram
            .cholesky()
            .ok_or(FkError::IllConditioned { step, condition })?;
        Ok(Self {
            design,
            chol: Some(chol),
            condition,
            ridged,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Coefficients for `targets[r][path]`, r = 0..R.
    pub fn fit(&self, targets: &[&[f64]]) -> Fit {
        let r = targets.len();
        let Some(chol) = &self.chol else {
            return Fit {
                coefs: targets.iter().map(|t| crate::stats::mean(t)).collect(),
                targets: r,
            };
        };
        let f = self.design.width;
        let n = self.design.paths;
        let design = &self.design;
        let blocks: Vec<Vec<f64>> = (0..n.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![0.0; f * r];
                let end = ((b + 1) * BLOCK).min(n);
                let rows = &design.features[b * BLOCK * f..end * f];
                for (t, tgt) in targets.iter().enumerate() {
                    for (row, &y) in rows.chunks_exact(f).zip(&tgt[b * BLOCK..end]) {
                        for (i, &phi) in row.iter().enumerate() {
                            acc[i * r + t] += phi * y;
                        }
                    }
                }
                acc
            })
            .collect();
        let acc = sum_blocks(&blocks, f * r);
        let inv_n = 1.0 / n as f64;
        let rhs = DMatrix::<f64>::from_fn(f, r, |i, t| acc[i * r + t] * inv_n);
        let sol = chol.solve(&rhs);
        let mut coefs = vec![0.0; f * r];
        for i in 0..f {
            for t in 0..r {
                coefs[i * r + t] = sol[(i, t)];
            }
        }
        Fit { coefs, targets: r }
    }
}

fn sum_blocks(blocks: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for b in blocks {
        for (a, v) in acc.iter_mut().zip(b) {
            *a += v;
        }
    }
    acc
}

/// One-shot least squares: factorise and fit.
pub fn fit(design: &Design, targets: &[&[f64]], step: usize) -> Result<Fit> {
    Ok(Projector::new(design.clone(), step)?.fit(targets))
}
