//! Command dispatch, verdict collection and output files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use fk_core::bsde::{apriori_check, comparison_check, stability_check, BsdePair};
use fk_core::calibration::{APRIORI_C_CAL, CALIBRATION_SLACK, STABILITY_C_CAL};
use fk_core::export::{Verdict, VerdictBlock};
use fk_core::feynman_kac::{
    b_continuity_probe, growth_probe, markov_consistency_check, mode_perturbations, oracle_compare,
    terminal_condition_probe,
};
use fk_core::linear::martingale_identity_check;
use fk_core::oracle_pde::{solve_semilinear_fd, FdModel, Grid1D};
use fk_core::stats::combine_stderr;
use fk_core::{
    evaluate_u, gamma_paths, solve_backward, solve_linear_explicit, DriverSpec, FkError,
    SpectralVector,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Command, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub tol_scale: f64,
    pub version: String,
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub probe: String,
    pub verdict: Verdict,
    pub statistic: Option<f64>,
    pub tolerance: Option<f64>,
    pub seed: u64,
    pub detail: Value,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub preset: String,
    pub provenance: Provenance,
    /// Sorted by probe name.
    pub checks: Vec<CheckEntry>,
}

impl RunReport {
    /// 0 if every check passed, 1 if any failed, 2 if any errored.
    pub fn exit_code(&self) -> i32 {
        if self.checks.iter().any(|c| c.verdict == Verdict::Error) {
            2
        } else if self.checks.iter().any(|c| c.verdict == Verdict::Fail) {
            1
        } else {
            0
        }
    }
}

/// Everything a run produces. Timings are kept apart so the report itself is reproducible.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// File name to CSV text.
    pub tables: BTreeMap<String, String>,
    /// Probe name to wall-clock seconds.
    pub timing: BTreeMap<String, f64>,
}

impl RunOutput {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(&self.report).map_err(std::io::Error::other)?;
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;
        for (name, body) in &self.tables {
            std::fs::write(dir.join(name), body)?;
        }
        let mut timing =
            serde_json::to_string_pretty(&self.timing).map_err(std::io::Error::other)?;
        timing.push('\n');
        std::fs::write(dir.join("timing.json"), timing)
    }
}

struct Check {
    entry: CheckEntry,
    tables: Vec<(String, String)>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn passed(block: VerdictBlock, detail: Value) -> Check {
    Check {
        entry: CheckEntry {
            probe: block.probe,
            verdict: block.verdict,
            statistic: finite(block.statistic),
            tolerance: finite(block.tolerance),
            seed: block.seed,
            detail,
            error: None,
        },
        tables: Vec::new(),
    }
}

fn errored(probe: &str, seed: u64, e: &FkError) -> Check {
    Check {
        entry: CheckEntry {
            probe: probe.to_string(),
            verdict: Verdict::Error,
            statistic: None,
            tolerance: None,
            seed,
            detail: Value::Null,
            error: Some(e.to_string()),
        },
        tables: Vec::new(),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs `command` on a pool of `config.threads` workers.
pub fn run(config: &RunConfig, command: Command) -> Result<RunOutput, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| e.to_string())?;
    let probes: Vec<(&str, ProbeFn)> = match command {
        Command::Solve => vec![("solve", solve_check as ProbeFn)],
        Command::VerifyBsde => vec![
            ("apriori", apriori),
            ("comparison", comparison),
            ("gamma_oracle", gamma_oracle),
            ("martingale_identity", martingale),
            ("stability", stability),
        ],
        Command::VerifyFk => vec![
            ("b_continuity", b_continuity),
            ("growth", growth),
            ("markov_consistency", markov),
            ("oracle_compare", oracle),
            ("terminal_condition", terminal),
        ],
        Command::Sweep => vec![
            ("sweep_dim", sweep_dim),
            ("sweep_paths", sweep_paths),
            ("sweep_steps", sweep_steps),
        ],
        Command::Report => return Err("`report` reads an existing output directory".into()),
    };
    let mut checks = Vec::new();
    let mut timing = BTreeMap::new();
    pool.install(|| {
        for (name, probe) in probes {
            let start = Instant::now();
            let outcome = match probe(config) {
                Ok(Some(c)) => Some(c),
                Ok(None) => None,
                Err(e) => Some(errored(name, config.seed, &e)),
            };
            timing.insert(name.to_string(), start.elapsed().as_secs_f64());
            checks.extend(outcome);
        }
    });
    checks.sort_by(|a, b| a.entry.probe.cmp(&b.entry.probe));

    let mut tables = BTreeMap::new();
    let mut summary = String::from("probe,verdict,statistic,tolerance,seed\n");
    for c in &checks {
        let e = &c.entry;
        let verdict = match e.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Error => "error",
        };
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            summary,
            "{},{verdict},{},{},{}",
            e.probe,
            num(e.statistic),
            num(e.tolerance),
            e.seed
        );
        for (name, body) in &c.tables {
            tables.insert(name.clone(), body.clone());
        }
    }
    tables.insert("checks.csv".to_string(), summary);
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        command: command.name().to_string(),
        preset: config.preset.clone(),
        provenance: Provenance {
            config_sha256: config_hash(&config.source),
            seed: config.seed,
            tol_scale: config.tol_scale,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.source.clone(),
        },
        checks: checks.into_iter().map(|c| c.entry).collect(),
    };
    Ok(RunOutput {
        report,
        tables,
        timing,
    })
}

/// `Ok(None)` means the probe does not apply to this problem.
type ProbeFn = fn(&RunConfig) -> fk_core::Result<Option<Check>>;

fn solve_check(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let u = evaluate_u(&cfg.problem, cfg.t, &cfg.x)?;
    let mut c = passed(
        VerdictBlock::new(
            "solve",
            u.value.is_finite(),
            u.value,
            f64::INFINITY,
            cfg.seed,
        ),
        to_value(&u),
    );
    let d = &u.diagnostics;
    c.tables.push((
        "solve.csv".into(),
        format!(
            "t,x_norm_h,value,stderr,paths,steps,max_condition\n{},{},{},{},{},{},{}\n",
            cfg.t,
            cfg.x.norm_h(),
            u.value,
            u.stderr,
            d.paths,
            d.steps,
            d.max_condition
        ),
    ));
    Ok(Some(c))
}

fn ensemble(cfg: &RunConfig) -> fk_core::Result<fk_core::PathEnsemble> {
    let p = &cfg.problem;
    let grid = p.grid_from(cfg.t)?;
    p.forward
        .simulate_seeded(&grid, &cfg.x, p.settings.paths, p.settings.seed)
}

fn comparison(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    let ens = ensemble(cfg)?;
    let shifted = p.terminal.clone().shifted(0.5);
    let r = comparison_check(
        BsdePair::new(&p.driver, &p.terminal),
        BsdePair::new(&p.driver, &shifted),
        &ens,
        &p.settings.basis,
        p.settings.picard_iters,
    )?;
    let band = 3.0 * cfg.tol_scale * r.stderr;
    let holds = r.margin >= -band && r.strict_applicable && r.margin > band;
    Ok(Some(passed(
        VerdictBlock::new("comparison", holds, r.margin, band, cfg.seed),
        to_value(&r),
    )))
}

fn apriori(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    let ens = ensemble(cfg)?;
    let sol = solve_backward(
        &p.driver,
        &p.terminal,
        &ens,
        &p.settings.basis,
        p.settings.picard_iters,
    )?;
    let constant =
        cfg.tol_scale * CALIBRATION_SLACK * APRIORI_C_CAL.iter().cloned().fold(0.0, f64::max);
    let r = apriori_check(&p.driver, &p.terminal, &ens, &sol, constant)?;
    Ok(Some(passed(
        VerdictBlock::new("apriori", r.holds, r.ratio, constant, cfg.seed),
        to_value(&r),
    )))
}

fn stability(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    let ens = ensemble(cfg)?;
    let driver2 = p.driver.clone().shifted(0.1);
    let terminal2 = p.terminal.clone().shifted(0.1);
    let constant =
        cfg.tol_scale * CALIBRATION_SLACK * STABILITY_C_CAL.iter().cloned().fold(0.0, f64::max);
    let r = stability_check(
        BsdePair::new(&p.driver, &p.terminal),
        BsdePair::new(&driver2, &terminal2),
        &ens,
        &p.settings.basis,
        p.settings.picard_iters,
        constant,
    )?;
    Ok(Some(passed(
        VerdictBlock::new("stability", r.holds, r.ratio, constant, cfg.seed),
        to_value(&r),
    )))
}

fn gamma_oracle(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    let DriverSpec::Linear(lin) = &p.driver else {
        return Ok(None);
    };
    let ens = ensemble(cfg)?;
    let sol = solve_backward(
        &p.driver,
        &p.terminal,
        &ens,
        &p.settings.basis,
        p.settings.picard_iters,
    )?;
    let gamma = gamma_paths(lin, &ens)?;
    let explicit = solve_linear_explicit(lin, &p.terminal, &ens, &gamma)?;
    let gap = (sol.y0 - explicit.y0).abs();
    let band = 3.0 * cfg.tol_scale * combine_stderr(sol.y0_stderr, explicit.stderr);
    Ok(Some(passed(
        VerdictBlock::new("gamma_oracle", gap <= band, gap, band, cfg.seed),
        json!({
            "y0_regression": sol.y0,
            "y0_regression_stderr": sol.y0_stderr,
            "y0_explicit": explicit.y0,
            "y0_explicit_stderr": explicit.stderr,
        }),
    )))
}

fn martingale(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    let DriverSpec::Linear(lin) = &p.driver else {
        return Ok(None);
    };
    let ens = ensemble(cfg)?;
    let sol = solve_backward(
        &p.driver,
        &p.terminal,
        &ens,
        &p.settings.basis,
        p.settings.picard_iters,
    )?;
    let gamma = gamma_paths(lin, &ens)?;
    let r = martingale_identity_check(lin, &ens, &gamma, &sol.y)?;
    let mut table = String::from("step,mean_increment,stderr\n");
    for row in &r.rows {
        let _ = writeln!(table, "{},{},{}", row.step, row.mean_increment, row.stderr);
    }
    let mut c = passed(
        VerdictBlock::new(
            "martingale_identity",
            r.holds,
            r.exceedances as f64,
            r.allowed as f64,
            cfg.seed,
        ),
        json!({ "exceedances": r.exceedances, "allowed": r.allowed }),
    );
    c.tables.push(("martingale_identity.csv".into(), table));
    Ok(Some(c))
}

fn markov(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    let grid = p.grid_from(cfg.t)?;
    let k = (grid.steps() / 5).max(1);
    if k >= grid.steps() {
        return Ok(None);
    }
    let h = grid.time(k) - cfg.t;
    let r = markov_consistency_check(p, cfg.t, &cfg.x, h)?;
    let band = 3.0 * cfg.tol_scale * r.stderr;
    let holds = r.gap.abs() <= band || r.gap.abs() <= 1e-12 * (1.0 + r.lhs.abs());
    Ok(Some(passed(
        VerdictBlock::new("markov_consistency", holds, r.gap.abs(), band, cfg.seed),
        to_value(&r),
    )))
}

fn b_continuity(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    let d = p.dim();
    let mut modes = vec![1, d.min(4), d];
    modes.dedup();
    let mags = [0.01, 0.0178, 0.0316, 0.0562, 0.1];
    let perts = mode_perturbations(d, &modes, &mags);
    let r = b_continuity_probe(p, cfg.t, &cfg.x, &perts)?;
    let mut table = String::from("mode,norm_h,norm_hm1_sq,u_base,u_perturbed,diff_sq,ratio\n");
    for row in &r.rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            row.mode,
            row.norm_h,
            row.norm_hm1_sq,
            row.u_base,
            row.u_perturbed,
            row.diff_sq,
            row.ratio
        );
    }
    let mut c = passed(
        r.verdict(cfg.seed),
        json!({ "max_ratio": r.max_ratio, "pairs": r.rows.len() }),
    );
    c.tables.push(("b_continuity.csv".into(), table));
    Ok(Some(c))
}

fn terminal(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    let span = p.horizon - cfg.t;
    let times: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|f| p.horizon - f * span)
        .collect();
    let tol = cfg.tol_scale * 0.02 * (1.0 + cfg.x.norm_h());
    let r = terminal_condition_probe(p, &cfg.x, &times, tol)?;
    let mut table = String::from("t,u,stderr,target,error\n");
    for row in &r.rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{}",
            row.t, row.u, row.stderr, row.target, row.error
        );
    }
    let mut c = passed(
        r.verdict(cfg.seed),
        json!({ "decreasing": r.decreasing, "final_error": r.final_error }),
    );
    c.tables.push(("terminal_condition.csv".into(), table));
    Ok(Some(c))
}

fn growth(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    if p.terminal.lipschitz(p.dim()).is_none() {
        return Ok(None);
    }
    let direction = if cfg.x.norm_h() > 0.0 {
        cfg.x.scaled(1.0 / cfg.x.norm_h())
    } else {
        SpectralVector::basis(p.dim(), 1, 1.0)
    };
    let r = growth_probe(p, cfg.t, &direction, &[1.0, 2.0, 4.0, 8.0, 16.0])?;
    let mut table = String::from("magnitude,norm_h,u,stderr\n");
    for row in &r.rows {
        let _ = writeln!(
            table,
            "{},{},{},{}",
            row.magnitude, row.norm_h, row.u, row.stderr
        );
    }
    let mut c = passed(r.verdict(cfg.seed), json!({ "exponent": r.exponent }));
    c.tables.push(("growth.csv".into(), table));
    Ok(Some(c))
}

fn oracle(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let p = &cfg.problem;
    if p.dim() != 1 || p.forward.noise_dim() != 1 {
        return Ok(None);
    }
    let model = match FdModel::from_forward(&p.forward) {
        Ok(m) => m,
        Err(FkError::OracleDomain(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let x0 = cfg.x.coeffs()[0];
    let span = p.horizon - cfg.t;
    let half = (x0.abs() + 1.0 + 6.0 * model.sigma.abs() * span.sqrt()).max(8.0);
    let grid = Grid1D::new(-half, half, 401, 200, cfg.t, p.horizon)?;
    let fd = solve_semilinear_fd(&model, &p.driver, &p.terminal, &grid)?;
    let mid = cfg.t + 0.5 * span;
    let points: Vec<(f64, f64)> = [cfg.t, mid]
        .iter()
        .flat_map(|&t| [x0 - 1.0, x0, x0 + 1.0].map(|x| (t, x)))
        .collect();
    let r = oracle_compare(p, &fd, &points)?;
    let tol = 0.05 * cfg.tol_scale;
    let mut table = String::from("t,x,u,stderr,reference,relative_error\n");
    for row in &r.rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{}",
            row.t, row.x, row.u, row.stderr, row.reference, row.relative_error
        );
    }
    // Where u vanishes the relative gap is meaningless; Monte Carlo noise then decides.
    let disagreeing = r
        .rows
        .iter()
        .filter(|row| {
            row.relative_error > tol
                && (row.u - row.reference).abs() > 3.0 * cfg.tol_scale * row.stderr
        })
        .count();
    let block = VerdictBlock::new(
        "oracle_compare",
        disagreeing == 0,
        r.max_relative_error,
        tol,
        cfg.seed,
    );
    let mut c = passed(
        block,
        json!({ "max_relative_error": r.max_relative_error, "disagreeing_points": disagreeing }),
    );
    c.tables.push(("oracle_compare.csv".into(), table));
    Ok(Some(c))
}

struct SweepRow {
    value: usize,
    u: f64,
    stderr: f64,
}

fn sweep_table(param: &str, rows: &[SweepRow]) -> String {
    let mut t = format!("{param},u,stderr\n");
    for r in rows {
        let _ = writeln!(t, "{},{},{}", r.value, r.u, r.stderr);
    }
    t
}

fn sweep_paths(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let base = cfg.problem.settings.paths;
    let mut rows = Vec::new();
    for m in [(base / 16).max(2), (base / 4).max(2), base] {
        let mut p = cfg.problem.clone();
        p.settings.paths = m;
        let u = evaluate_u(&p, cfg.t, &cfg.x)?;
        rows.push(SweepRow {
            value: m,
            u: u.value,
            stderr: u.stderr,
        });
    }
    // Standard errors must shrink as paths grow.
    let holds = rows
        .windows(2)
        .all(|w| w[1].stderr <= w[0].stderr || w[0].stderr == 0.0);
    let last = rows.last().map(|r| r.stderr).unwrap_or(0.0);
    let mut c = passed(
        VerdictBlock::new("sweep_paths", holds, last, rows[0].stderr, cfg.seed),
        Value::Null,
    );
    c.tables
        .push(("sweep_paths.csv".into(), sweep_table("paths", &rows)));
    Ok(Some(c))
}

fn sweep_steps(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let base = cfg.problem.settings.steps;
    let mut rows = Vec::new();
    for n in [(base / 2).max(1), base, 2 * base] {
        let mut p = cfg.problem.clone();
        p.settings.steps = n;
        let u = evaluate_u(&p, cfg.t, &cfg.x)?;
        rows.push(SweepRow {
            value: n,
            u: u.value,
            stderr: u.stderr,
        });
    }
    // Successive differences must not grow beyond Monte Carlo noise.
    let d1 = (rows[1].u - rows[0].u).abs();
    let d2 = (rows[2].u - rows[1].u).abs();
    let noise = 3.0 * cfg.tol_scale * combine_stderr(rows[1].stderr, rows[2].stderr);
    let holds = d2 <= d1 + noise;
    let mut c = passed(
        VerdictBlock::new("sweep_steps", holds, d2, d1 + noise, cfg.seed),
        Value::Null,
    );
    c.tables
        .push(("sweep_steps.csv".into(), sweep_table("steps", &rows)));
    Ok(Some(c))
}

fn sweep_dim(cfg: &RunConfig) -> fk_core::Result<Option<Check>> {
    let d = cfg.problem.dim();
    if d == 1 {
        return Ok(None);
    }
    let mut rows = Vec::new();
    for dim in [d, 2 * d] {
        let c = cfg.with_dim(dim).map_err(|e| FkError::InvalidInput {
            field: "dim",
            reason: e.to_string(),
        })?;
        let u = evaluate_u(&c.problem, c.t, &c.x)?;
        rows.push(SweepRow {
            value: dim,
            u: u.value,
            stderr: u.stderr,
        });
    }
    let gap = (rows[1].u - rows[0].u).abs();
    let band = 3.0 * cfg.tol_scale * combine_stderr(rows[0].stderr, rows[1].stderr) + 1e-12;
    let mut c = passed(
        VerdictBlock::new("sweep_dim", gap <= band, gap, band, cfg.seed),
        Value::Null,
    );
    c.tables
        .push(("sweep_dim.csv".into(), sweep_table("dim", &rows)));
    Ok(Some(c))
}

/// Reads `report.json` from `dir`.
pub fn read_report(dir: &Path) -> Result<RunReport, String> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("malformed {}: {e}", path.display()))
}

/// One line per check.
pub fn summarize(report: &RunReport) -> String {
    let mut s = format!(
        "{} on preset {} (seed {})\n",
        report.command, report.preset, report.provenance.seed
    );
    for c in &report.checks {
        let v = match c.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "FAIL",
            Verdict::Error => "ERROR",
        };
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into());
        let _ = write!(
            s,
            "  {:<22} {:<5} statistic={} tolerance={}",
            c.probe,
            v,
            num(c.statistic),
            num(c.tolerance)
        );
        if let Some(e) = &c.error {
            let _ = write!(s, " ({e})");
        }
        s.push('\n');
    }
    s
}
