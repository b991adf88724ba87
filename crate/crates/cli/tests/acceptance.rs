//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use fk_cli::{parse_config, run, Command};
use fk_core::bsde::{comparison_check, BackwardSetup};
use fk_core::calibration::{
    calibration_family, measure, APRIORI_C_CAL, CALIBRATION_SLACK, STABILITY_C_CAL,
};
use fk_core::feynman_kac::{b_continuity_probe, oracle_compare, terminal_condition_probe};
use fk_core::oracle_pde::FdModel;
use fk_core::presets::{heat_model, linear_family, ou_model, preset};
use fk_core::stats::{combine_stderr, mean_stderr};
use fk_core::{
    evaluate_u, gamma_paths, solve_linear_explicit, BsdePair, DiagonalGenerator, DriverSpec,
    Grid1D, PdeProblem, RegressionBasis, RngPolicy, SolverSettings, SpectralVector,
    TerminalFunctional, TimeGrid,
};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn with_paths(mut p: PdeProblem, paths: usize) -> PdeProblem {
    p.settings.paths = paths;
    p
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() <= limit_s
}

/// Explicit linear solution against the regression solver on OU paths.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let model = ou_model(1.0, 1.0).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(0.0, 1.0, 50).map_err(|e| e.to_string())?;
    let x0 = SpectralVector::new(vec![1.0]).map_err(|e| e.to_string())?;
    let basis = RegressionBasis::default_for(1);
    let family = linear_family();
    let mut worst_agree = family.len();
    for seed in 1..=20u64 {
        let ens = model
            .simulate_seeded(&grid, &x0, 100_000, seed)
            .map_err(|e| e.to_string())?;
        // The regressions depend on the paths only; share them across presets.
        let setup = BackwardSetup::new(&ens, &basis);
        let mut agree = 0;
        for (lin, g) in &family {
            let sol = setup
                .solve(&DriverSpec::Linear(lin.clone()), g, 1)
                .map_err(|e| e.to_string())?;
            let gamma = gamma_paths(lin, &ens).map_err(|e| e.to_string())?;
            let exp = solve_linear_explicit(lin, g, &ens, &gamma).map_err(|e| e.to_string())?;
            if (sol.y0 - exp.y0).abs() <= 3.0 * combine_stderr(sol.y0_stderr, exp.stderr) {
                agree += 1;
            }
        }
        worst_agree = worst_agree.min(agree);
    }
    let elapsed = start.elapsed();
    let ok = worst_agree >= 4 && within(elapsed, 120.0);
    Ok((
        ok,
        format!(
            "min agreeing presets per seed {worst_agree}/5 over 20 seeds, {:.1}s (limit 120s)",
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let p = preset("heat_d1").map_err(|e| e.to_string())?;
    let u = evaluate_u(&with_paths(p.problem, 100_000), 0.0, &p.x).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rel = (u.value - 1.0).abs();
    Ok((
        rel <= 0.02 && within(elapsed, 10.0),
        format!(
            "u = {:.6} (rel err {rel:.4}, limit 0.02), {:.1}s (limit 10s)",
            u.value,
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let p = preset("heat_d8").map_err(|e| e.to_string())?;
    let u = evaluate_u(&with_paths(p.problem, 100_000), 0.0, &p.x).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let exact = 0.37270783885343794;
    let gap = (u.value - exact).abs();
    Ok((
        gap <= 3.0 * u.stderr && within(elapsed, 30.0),
        format!(
            "u = {:.6}, exact {exact:.6}, gap {gap:.2e} vs 3*stderr {:.2e}, {:.1}s (limit 30s)",
            u.value,
            3.0 * u.stderr,
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let p = with_paths(
        preset("semilinear_sine")
            .map_err(|e| e.to_string())?
            .problem,
        100_000,
    );
    let model = FdModel::from_forward(&p.forward).map_err(|e| e.to_string())?;
    let grid = Grid1D::new(-8.0, 8.0, 401, 200, 0.0, p.horizon).map_err(|e| e.to_string())?;
    let fd = fk_core::solve_semilinear_fd(&model, &p.driver, &p.terminal, &grid)
        .map_err(|e| e.to_string())?;
    let points: Vec<(f64, f64)> = [0.0, 0.5]
        .iter()
        .flat_map(|&t| [-1.0, 0.0, 1.0].map(move |x| (t, x)))
        .collect();
    let r = oracle_compare(&p, &fd, &points).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    Ok((
        r.max_relative_error <= 0.05 && within(elapsed, 60.0),
        format!(
            "max relative gap {:.4} over {} points (limit 0.05), {:.1}s (limit 60s)",
            r.max_relative_error,
            r.rows.len(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_5() -> Outcome {
    let model = ou_model(1.0, 1.0).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(0.0, 1.0, 50).map_err(|e| e.to_string())?;
    let x0 = SpectralVector::new(vec![1.0]).map_err(|e| e.to_string())?;
    let f = DriverSpec::LinearY { rho: 1.0 };
    let g1 = TerminalFunctional::Mode { k: 1, scale: 1.0 };
    let g2 = g1.clone().shifted(0.5);
    let expected = 0.18393972058572117;
    let (mut off, mut weak_fail, mut strict_fail, mut worst) = (0, 0, 0, 0.0f64);
    for seed in 1..=20u64 {
        let ens = model
            .simulate_seeded(&grid, &x0, 100_000, seed)
            .map_err(|e| e.to_string())?;
        let r = comparison_check(
            BsdePair::new(&f, &g1),
            BsdePair::new(&f, &g2),
            &ens,
            &RegressionBasis::default_for(1),
            1,
        )
        .map_err(|e| e.to_string())?;
        let z = (r.margin - expected).abs() / r.stderr;
        worst = worst.max(z);
        off += usize::from(z > 3.0);
        weak_fail += usize::from(!r.weak_holds);
        strict_fail += usize::from(!r.strict_holds);
    }
    Ok((
        off == 0 && weak_fail == 0 && strict_fail == 0,
        format!(
            "margin outside 3*stderr in {off}/20 seeds (worst {worst:.2} stderr), weak failures {weak_fail}, strict failures {strict_fail}"
        ),
    ))
}

fn criterion_6() -> Outcome {
    let family = calibration_family();
    let (mut exceed, mut worst) = (0, 0.0f64);
    for seed in 101..=105u64 {
        for (i, case) in family.iter().enumerate() {
            let m = measure(case, seed).map_err(|e| e.to_string())?;
            let a = m.apriori_ratio / APRIORI_C_CAL[i];
            let s = m.stability_ratio / STABILITY_C_CAL[i];
            worst = worst.max(a).max(s);
            exceed += usize::from(a > CALIBRATION_SLACK) + usize::from(s > CALIBRATION_SLACK);
        }
    }
    Ok((
        exceed == 0,
        format!("ratio / C_cal at most {worst:.4} (limit {CALIBRATION_SLACK}), {exceed} exceedances over 5 seeds x 10 cases"),
    ))
}

fn criterion_7() -> Outcome {
    let p8 = preset("heat_d8").map_err(|e| e.to_string())?;
    let max_ratio = |dim: usize| -> Result<f64, String> {
        let forward = heat_model(dim, 1.0).map_err(|e| e.to_string())?;
        let settings = SolverSettings {
            paths: 10_000,
            steps: 50,
            basis: RegressionBasis::default_for(dim),
            picard_iters: 1,
            seed: 42,
        };
        let problem = PdeProblem::new(
            forward,
            p8.problem.driver.clone(),
            p8.problem.terminal.clone(),
            0.1,
            settings,
        )
        .map_err(|e| e.to_string())?;
        let x = SpectralVector::basis(dim, 1, 1.0);
        let modes = [1usize, 4, 8];
        let perts: Vec<SpectralVector> = (0..20)
            .map(|j| SpectralVector::basis(dim, modes[j % 3], 10f64.powf(-2.0 + j as f64 / 19.0)))
            .collect();
        let r = b_continuity_probe(&problem, 0.0, &x, &perts).map_err(|e| e.to_string())?;
        Ok(r.max_ratio)
    };
    let (a, b) = (max_ratio(8)?, max_ratio(16)?);
    let factor = (a / b).max(b / a);
    Ok((
        a.is_finite() && b.is_finite() && factor <= 2.0,
        format!("max ratio d=8 {a:.6}, d=16 {b:.6}, factor {factor:.4} (limit 2)"),
    ))
}

fn criterion_8() -> Outcome {
    let p = preset("linear").map_err(|e| e.to_string())?;
    let horizon = p.problem.horizon;
    let times: Vec<f64> = [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|h| horizon - h)
        .collect();
    let tol = 0.02 * (1.0 + p.x.norm_h());
    let r = terminal_condition_probe(&with_paths(p.problem, 100_000), &p.x, &times, tol)
        .map_err(|e| e.to_string())?;
    let errs: Vec<String> = r
        .rows
        .iter()
        .map(|row| format!("{:.4}", row.error))
        .collect();
    Ok((
        r.holds,
        format!(
            "errors [{}], decreasing {}, final {:.4} (limit {tol:.4})",
            errs.join(", "),
            r.decreasing,
            r.final_error
        ),
    ))
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        if name != "timing.json" {
            files.push((name, std::fs::read(&path).map_err(|e| e.to_string())?));
        }
    }
    files.sort();
    Ok(files)
}

fn criterion_9() -> Outcome {
    let tmp = std::env::temp_dir().join(format!("fk-acceptance-{}", std::process::id()));
    let mut identical = true;
    let mut compared = 0;
    for command in [Command::VerifyBsde, Command::VerifyFk] {
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        for threads in [1usize, 4, 8] {
            let mut cfg = parse_config("preset = \"linear\"\n[run]\nseed = 42\n")
                .map_err(|e| e.to_string())?;
            let out = tmp.join(format!("{}-{threads}", command.name()));
            cfg.apply_overrides(None, Some(threads), Some(out.clone()), None)
                .map_err(|e| e.to_string())?;
            run(&cfg, command)?.write(&out).map_err(|e| e.to_string())?;
            let files = snapshot(&out)?;
            compared += files.len();
            match &reference {
                None => reference = Some(files),
                Some(r) => identical &= *r == files,
            }
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok((
        identical,
        format!("verify-bsde and verify-fk outputs under 1/4/8 threads identical: {identical} ({compared} files compared)"),
    ))
}

fn criterion_10() -> Outcome {
    let model = ou_model(1.0, 1.0).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(0.0, 1.0, 1000).map_err(|e| e.to_string())?;
    let x0 = SpectralVector::new(vec![1.0]).map_err(|e| e.to_string())?;
    let ens = model
        .simulate_seeded(&grid, &x0, 100_000, 11)
        .map_err(|e| e.to_string())?;
    let xt: Vec<f64> = (0..ens.paths()).map(|m| ens.terminal(m)[0]).collect();
    let mean = mean_stderr(&xt);
    let centred: Vec<f64> = xt.iter().map(|x| (x - mean.mean).powi(2)).collect();
    let var = mean_stderr(&centred);
    let (mean_exact, var_exact) = (0.36787944117144233, 0.43233235838169365);
    let moments_ok = (mean.mean - mean_exact).abs() <= 3.0 * mean.stderr
        && (var.mean - var_exact).abs() <= 3.0 * var.stderr;

    let gen = DiagonalGenerator::dirichlet_laplacian(16);
    let mut rng = RngPolicy::new(2024).path_stream(0);
    let (mut compose_bad, mut contract_bad) = (0, 0);
    for _ in 0..1000 {
        let v: Vec<f64> = (0..16).map(|_| 10.0 * rng.standard_normal()).collect();
        let x = SpectralVector::new(v).map_err(|e| e.to_string())?;
        let (s, t) = (0.1 * rng.uniform(), 0.1 * rng.uniform());
        let two = gen
            .apply_semigroup(s, &gen.apply_semigroup(t, &x).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let one = gen.apply_semigroup(s + t, &x).map_err(|e| e.to_string())?;
        // Rounding of the exponent lambda_k (s + t) is amplified by its own size.
        compose_bad += usize::from(
            two.coeffs()
                .iter()
                .zip(one.coeffs())
                .zip(gen.lambdas())
                .any(|((a, b), l)| {
                    (a - b).abs() > f64::EPSILON * (8.0 + 4.0 * l * (s + t)) * a.abs().max(b.abs())
                }),
        );
        contract_bad += usize::from(
            gen.apply_semigroup(s, &x)
                .map_err(|e| e.to_string())?
                .norm_h()
                > x.norm_h(),
        );
    }
    Ok((
        moments_ok && compose_bad == 0 && contract_bad == 0,
        format!(
            "OU mean {:.5} (exact {mean_exact:.5}), var {:.5} (exact {var_exact:.5}), moments ok {moments_ok}; \
             composition violations {compose_bad}/1000, contraction violations {contract_bad}/1000",
            mean.mean, var.mean
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("explicit linear solution vs regression", criterion_1),
        ("Gaussian second moment", criterion_2),
        ("stochastic heat semigroup mean", criterion_3),
        ("semilinear reference solver agreement", criterion_4),
        ("comparison margin", criterion_5),
        ("a priori and stability calibration", criterion_6),
        ("B-continuity stable in dimension", criterion_7),
        ("terminal condition", criterion_8),
        ("thread-count determinism", criterion_9),
        ("forward moments and semigroup invariants", criterion_10),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!ok);
        println!(
            "criterion {:>2} {:<42} {} [{:.1}s] {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
