//! Run configuration: a TOML file naming a preset plus per-section overrides.
//!
//! ```toml
//! preset = "heat_d8"
//!
//! [run]          # command, seed, threads, out, tol_scale
//! [spectral]     # operator, dim, lambda, c0
//! [forward]      # d_xi, coefficients, q, beta, kappa, shift, gamma
//! [bsde]         # driver, terminal, picard_iters, basis_degree, basis_modes
//! [feynman_kac]  # horizon, t, x, paths, steps
//! ```
//!
//! Every key is optional except `preset`; omitted keys keep the preset's value.
//! `defaults.toml` at the repository root lists all keys with their defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use fk_core::presets::{self, Preset};
use fk_core::{
    BWeight, CoefficientField, DiagonalGenerator, Diffusion, Drift, DriverSpec, ForwardModel,
    NoiseModel, PdeProblem, RegressionBasis, SolverSettings, SpectralVector, TerminalFunctional,
};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    VerifyBsde,
    VerifyFk,
    Sweep,
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::VerifyBsde => "verify-bsde",
            Command::VerifyFk => "verify-fk",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

impl FromStr for Command {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "solve" => Command::Solve,
            "verify-bsde" => Command::VerifyBsde,
            "verify-fk" => Command::VerifyFk,
            "sweep" => Command::Sweep,
            "report" => Command::Report,
            other => return Err(invalid("run.command", format!("unknown command `{other}`"))),
        })
    }
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: String,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    spectral: SpectralSection,
    #[serde(default)]
    forward: ForwardSection,
    #[serde(default)]
    bsde: BsdeSection,
    #[serde(default)]
    feynman_kac: FkSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    command: Option<String>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    tol_scale: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpectralSection {
    operator: Option<String>,
    dim: Option<usize>,
    lambda: Option<f64>,
    c0: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForwardSection {
    d_xi: Option<usize>,
    coefficients: Option<String>,
    q: Option<f64>,
    beta: Option<f64>,
    kappa: Option<f64>,
    shift: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BsdeSection {
    driver: Option<DriverSpec>,
    terminal: Option<TerminalFunctional>,
    picard_iters: Option<usize>,
    basis_degree: Option<usize>,
    basis_modes: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FkSection {
    horizon: Option<f64>,
    t: Option<f64>,
    x: Option<Vec<f64>>,
    paths: Option<usize>,
    steps: Option<usize>,
}

/// A fully validated run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: String,
    pub command: Option<Command>,
    pub problem: PdeProblem,
    pub t: f64,
    pub x: SpectralVector,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub tol_scale: f64,
    /// The configuration text as read, kept for provenance.
    pub source: String,
    raw: RawConfig,
}

impl RunConfig {
    /// The same run on `dim` modes; the initial state is zero-padded or truncated.
    pub fn with_dim(&self, dim: usize) -> Result<Self, ConfigError> {
        let mut raw = self.raw.clone();
        raw.spectral.dim = Some(dim);
        if let Some(x) = raw.feynman_kac.x.as_mut() {
            x.resize(dim, 0.0);
        }
        let mut cfg = resolve(raw, self.source.clone())?;
        cfg.apply_overrides(
            Some(self.seed),
            Some(self.threads),
            Some(self.out.clone()),
            Some(self.tol_scale),
        )?;
        Ok(cfg)
    }

    /// Command-line flags take precedence over the file.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        threads: Option<usize>,
        out: Option<PathBuf>,
        tol_scale: Option<f64>,
    ) -> Result<(), ConfigError> {
        if let Some(s) = seed {
            self.seed = s;
            self.problem.settings.seed = s;
        }
        if let Some(n) = threads {
            if n == 0 {
                return Err(invalid("threads", "must be at least 1"));
            }
            self.threads = n;
        }
        if let Some(o) = out {
            self.out = o;
        }
        if let Some(s) = tol_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid("tol_scale", "must be positive"));
            }
            self.tol_scale = s;
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(raw, text.to_string())
}

fn operator_of(gen: &DiagonalGenerator) -> (&'static str, f64) {
    let l = gen.lambdas();
    if l.iter().all(|v| *v == 0.0) {
        ("zero", 0.0)
    } else if l.iter().all(|v| *v == l[0]) {
        ("identity_decay", l[0])
    } else {
        ("dirichlet_laplacian", 0.0)
    }
}

fn resolve(raw: RawConfig, source: String) -> Result<RunConfig, ConfigError> {
    let base: Preset = presets::preset(&raw.preset).map_err(|e| invalid("preset", e))?;
    let base_problem = &base.problem;
    let base_fwd = &base_problem.forward;
    let base_dim = base_fwd.dim();

    let sp = &raw.spectral;
    let (base_op, base_lambda) = operator_of(&base_fwd.generator);
    let dim = sp.dim.unwrap_or(base_dim);
    if dim == 0 {
        return Err(invalid("spectral.dim", "must be at least 1"));
    }
    let generator = if sp.operator.is_some() || sp.dim.is_some() || sp.lambda.is_some() {
        let op = sp.operator.as_deref().unwrap_or(base_op);
        match op {
            "dirichlet_laplacian" => DiagonalGenerator::dirichlet_laplacian(dim),
            "identity_decay" => {
                DiagonalGenerator::identity_decay(dim, sp.lambda.unwrap_or(base_lambda))
                    .map_err(|e| invalid("spectral.lambda", e))?
            }
            "zero" => DiagonalGenerator::zero(dim),
            other => {
                return Err(invalid(
                    "spectral.operator",
                    format!("unknown operator `{other}`"),
                ))
            }
        }
    } else {
        base_fwd.generator.clone()
    };
    let bweight = match sp.c0 {
        Some(c0) => {
            BWeight::canonical_with_c0(&generator, c0).map_err(|e| invalid("spectral.c0", e))?
        }
        None => BWeight::canonical(&generator),
    };

    let fw = &raw.forward;
    let d_xi = fw.d_xi.unwrap_or(if base_fwd.noise_dim() == base_dim {
        dim
    } else {
        base_fwd.noise_dim()
    });
    let noise = NoiseModel::new(d_xi).map_err(|e| invalid("forward.d_xi", e))?;
    let coeffs = coefficient_field(fw, &base_fwd.coeffs, &bweight)?;
    let forward = ForwardModel::new(generator, bweight, noise, coeffs).map_err(|e| {
        let field = match e {
            fk_core::FkError::StrongBCondition { .. } => "spectral.c0",
            fk_core::FkError::LipschitzAudit { .. } => "forward.coefficients",
            _ => "forward",
        };
        invalid(field, e)
    })?;

    let bs = &raw.bsde;
    let driver = bs
        .driver
        .clone()
        .unwrap_or_else(|| base_problem.driver.clone());
    let terminal = bs
        .terminal
        .clone()
        .unwrap_or_else(|| base_problem.terminal.clone());
    driver
        .validate(d_xi)
        .map_err(|e| invalid("bsde.driver", e))?;
    terminal
        .validate(dim)
        .map_err(|e| invalid("bsde.terminal", e))?;
    let default_basis = RegressionBasis::default_for(dim);
    let basis = RegressionBasis::new(
        bs.basis_degree.unwrap_or(default_basis.degree),
        bs.basis_modes.unwrap_or(default_basis.modes),
    );

    let fk = &raw.feynman_kac;
    let seed = raw.run.seed.unwrap_or(base_problem.settings.seed);
    let settings = SolverSettings {
        paths: fk.paths.unwrap_or(base_problem.settings.paths),
        steps: fk.steps.unwrap_or(base_problem.settings.steps),
        basis,
        picard_iters: bs
            .picard_iters
            .unwrap_or(base_problem.settings.picard_iters),
        seed,
    };
    let horizon = fk.horizon.unwrap_or(base_problem.horizon);
    let problem = PdeProblem::new(forward, driver, terminal, horizon, settings).map_err(|e| {
        let field = match &e {
            fk_core::FkError::InvalidInput { field, .. } => format!("feynman_kac.{field}"),
            _ => "feynman_kac".to_string(),
        };
        invalid(&field, e)
    })?;

    let t = fk.t.unwrap_or(base.t);
    if !(t >= 0.0 && t < horizon) {
        return Err(invalid(
            "feynman_kac.t",
            format!("must lie in [0, {horizon}), got {t}"),
        ));
    }
    let x = match &fk.x {
        Some(v) => SpectralVector::new(v.clone()).map_err(|e| invalid("feynman_kac.x", e))?,
        None => {
            let mut v = base.x.coeffs().to_vec();
            v.resize(dim, 0.0);
            SpectralVector::new(v).map_err(|e| invalid("feynman_kac.x", e))?
        }
    };
    if x.dim() != dim {
        return Err(invalid(
            "feynman_kac.x",
            format!("has {} entries, the problem has {dim} modes", x.dim()),
        ));
    }

    let command = raw
        .run
        .command
        .as_deref()
        .map(Command::from_str)
        .transpose()?;
    let threads = raw.run.threads.unwrap_or(1);
    if threads == 0 {
        return Err(invalid("run.threads", "must be at least 1"));
    }
    let tol_scale = raw.run.tol_scale.unwrap_or(1.0);
    if !(tol_scale.is_finite() && tol_scale > 0.0) {
        return Err(invalid("run.tol_scale", "must be positive"));
    }
    Ok(RunConfig {
        preset: raw.preset.clone(),
        command,
        problem,
        t,
        x,
        out: raw.run.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        seed,
        threads,
        tol_scale,
        source,
        raw,
    })
}

fn coefficient_field(
    fw: &ForwardSection,
    base: &CoefficientField,
    bweight: &BWeight,
) -> Result<CoefficientField, ConfigError> {
    let base_q = match &base.diffusion {
        Diffusion::Zero => 0.0,
        Diffusion::Constant { q } | Diffusion::Multiplicative { q, .. } => *q,
    };
    let q = fw.q.unwrap_or(base_q);
    let kind = match fw.coefficients.as_deref() {
        Some(k) => k,
        None => {
            if fw.q.is_none()
                && fw.beta.is_none()
                && fw.kappa.is_none()
                && fw.shift.is_none()
                && fw.gamma.is_none()
            {
                // Keep the preset, refreshing weights that depend on B.
                let mut c = base.clone();
                if let Diffusion::Multiplicative { q, gamma, .. } = c.diffusion {
                    c.diffusion = Diffusion::multiplicative(q, gamma, bweight);
                }
                return Ok(c);
            }
            match base.drift {
                Drift::NemytskiiSine { .. } => "nemytskii_sine",
                Drift::Affine { .. } => "affine",
                Drift::Zero if q == 0.0 => "zero",
                Drift::Zero => "constant_sigma",
            }
        }
    };
    let mut field = match kind {
        "zero" => CoefficientField::zero(),
        "constant_sigma" => CoefficientField::constant_sigma(q),
        "nemytskii_sine" => CoefficientField::nemytskii_sine(fw.beta.unwrap_or(0.5), q),
        "affine" => CoefficientField::affine(fw.kappa.unwrap_or(0.0), fw.shift.unwrap_or(0.0), q),
        other => {
            return Err(invalid(
                "forward.coefficients",
                format!("unknown preset `{other}`"),
            ))
        }
    };
    if let Some(gamma) = fw.gamma {
        field.diffusion = Diffusion::multiplicative(q, gamma, bweight);
    }
    Ok(field)
}
