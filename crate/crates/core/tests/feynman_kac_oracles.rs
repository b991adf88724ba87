//! Pointwise values of u and the probes around it, against closed forms.

use fk_core::feynman_kac::{
    b_continuity_probe, growth_probe, markov_consistency_check, mode_perturbations, oracle_compare,
    terminal_condition_probe,
};
use fk_core::oracle_pde::{closed_form, FdModel};
use fk_core::presets::{forward_model, ou_model, preset};
use fk_core::{
    evaluate_u, gamma_paths, solve_linear_explicit, solve_semilinear_fd, BWeight, CoefficientField,
    DiagonalGenerator, DriverSpec, ForwardModel, Grid1D, LinearDriver, NoiseModel, PdeProblem,
    RegressionBasis, SolverSettings, SpectralVector, TerminalFunctional, TimeGrid,
};

fn settings(paths: usize, steps: usize, dim: usize, seed: u64) -> SolverSettings {
    SolverSettings {
        paths,
        steps,
        basis: RegressionBasis::default_for(dim),
        picard_iters: 1,
        seed,
    }
}

fn with_paths(mut p: PdeProblem, paths: usize) -> PdeProblem {
    p.settings.paths = paths;
    p
}

#[test]
fn frozen_dynamics_return_terminal_exactly() {
    let p = preset("frozen").unwrap();
    let u = evaluate_u(&p.problem, 0.3, &p.x).unwrap();
    assert_eq!(u.value, 0.644217687237691);
    assert_eq!(u.stderr, 0.0);
}

#[test]
fn gaussian_second_moment() {
    let p = preset("heat_d1").unwrap();
    let u = evaluate_u(&with_paths(p.problem, 100_000), 0.0, &p.x).unwrap();
    assert!((u.value - 1.0).abs() <= 0.02, "{u:?}");
}

#[test]
fn stochastic_heat_semigroup_mean() {
    let p = preset("heat_d8").unwrap();
    let u = evaluate_u(&with_paths(p.problem, 100_000), 0.0, &p.x).unwrap();
    assert!(
        (u.value - 0.37270783885343794).abs() <= 3.0 * u.stderr,
        "{u:?}"
    );
}

#[test]
fn evaluation_is_seed_deterministic() {
    let p = preset("linear").unwrap();
    let a = evaluate_u(&p.problem, 0.0, &p.x).unwrap();
    let b = evaluate_u(&p.problem, 0.0, &p.x).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    let c = evaluate_u(&p.problem.with_seed(43), 0.0, &p.x).unwrap();
    assert_ne!(a.value, c.value);
}

#[test]
fn markov_gap_frozen_is_zero() {
    let p = preset("frozen").unwrap();
    let r = markov_consistency_check(&p.problem, 0.0, &p.x, 0.2).unwrap();
    assert_eq!(r.gap, 0.0);
}

#[test]
fn markov_gap_ou_and_linear() {
    let p = preset("ou").unwrap();
    let r = markov_consistency_check(&p.problem, 0.0, &p.x, 0.2).unwrap();
    assert!(r.holds, "{r:?}");
    let p = preset("linear").unwrap();
    for h in [0.1, 0.2] {
        let r = markov_consistency_check(&p.problem, 0.0, &p.x, h).unwrap();
        assert!(r.holds, "{r:?}");
    }
}

#[test]
fn markov_gap_rejects_off_grid_step() {
    let p = preset("ou").unwrap();
    assert!(markov_consistency_check(&p.problem, 0.0, &p.x, 0.013).is_err());
    assert!(markov_consistency_check(&p.problem, 0.0, &p.x, 1.0).is_err());
}

fn frozen_with_weights(dim: usize, terminal: TerminalFunctional) -> PdeProblem {
    // Zero generator with Laplacian-type weights; c0 restores the strong B-condition.
    let lambdas = DiagonalGenerator::dirichlet_laplacian(dim);
    let weights: Vec<f64> = lambdas.lambdas().iter().map(|l| 1.0 / (1.0 + l)).collect();
    let c0 = 1.0 / weights[dim - 1];
    let forward = ForwardModel::new(
        DiagonalGenerator::zero(dim),
        BWeight::new(weights, c0).unwrap(),
        NoiseModel::new(dim).unwrap(),
        CoefficientField::zero(),
    )
    .unwrap();
    PdeProblem::new(
        forward,
        DriverSpec::Zero,
        terminal,
        1.0,
        settings(10, 5, dim, 1),
    )
    .unwrap()
}

#[test]
fn b_continuity_frozen_bounded_by_lipschitz_over_weight() {
    let p = frozen_with_weights(4, TerminalFunctional::SinMode { k: 1 });
    let x = SpectralVector::basis(4, 1, 0.3);
    let perts = mode_perturbations(4, &[1], &[0.01, 0.03, 0.1]);
    let r = b_continuity_probe(&p, 0.0, &x, &perts).unwrap();
    let b1 = p.forward.bweight.weights()[0];
    for row in &r.rows {
        assert!(row.ratio <= 1.0 / b1 + 1e-9, "{row:?}");
    }
}

#[test]
fn b_continuity_high_mode_amplified_by_weight_ratio() {
    let p = frozen_with_weights(4, TerminalFunctional::SinOfSum { w: 1.0 });
    let x = SpectralVector::zeros(4);
    let low = b_continuity_probe(&p, 0.0, &x, &mode_perturbations(4, &[1], &[0.05])).unwrap();
    let high = b_continuity_probe(&p, 0.0, &x, &mode_perturbations(4, &[4], &[0.05])).unwrap();
    let w = p.forward.bweight.weights();
    let factor = high.max_ratio / low.max_ratio;
    assert!((factor - w[0] / w[3]).abs() < 1e-9 * factor, "{factor}");
}

#[test]
fn b_continuity_rejects_zero_perturbation() {
    let p = preset("ou").unwrap();
    assert!(b_continuity_probe(&p.problem, 0.0, &p.x, &[SpectralVector::zeros(1)]).is_err());
}

#[test]
fn terminal_condition_frozen_is_exact() {
    let p = preset("frozen").unwrap();
    let r = terminal_condition_probe(&p.problem, &p.x, &[0.5, 0.9, 0.99], 1e-12).unwrap();
    assert!(r.rows.iter().all(|row| row.error == 0.0));
    assert!(r.holds);
}

#[test]
fn terminal_condition_heat_square_decreases_linearly() {
    let mut problem = preset("heat_d8").unwrap().problem;
    problem.terminal = TerminalFunctional::SquareMode { k: 1 };
    problem.settings.paths = 50_000;
    let x = SpectralVector::basis(8, 1, 1.0);
    let times = [0.06, 0.08, 0.09];
    let r = terminal_condition_probe(&problem, &x, &times, 1.0).unwrap();
    assert!(r.decreasing, "{r:?}");
    // Variance of the first mode: (1 - e^{-2 lambda tau}) / (2 lambda) up to the scheme.
    for row in &r.rows {
        let lambda = std::f64::consts::PI.powi(2);
        let tau = 0.1 - row.t;
        let var = (1.0 - (-2.0 * lambda * tau).exp()) / (2.0 * lambda);
        assert!(
            (row.error - var).abs() <= 3.0 * row.stderr + 0.05 * var,
            "{row:?} vs {var}"
        );
    }
}

#[test]
fn terminal_condition_linear_preset() {
    let p = preset("linear").unwrap();
    let times = [0.8, 0.9, 0.95, 0.975];
    let r = terminal_condition_probe(&with_paths(p.problem, 50_000), &p.x, &times, 0.04).unwrap();
    assert!(r.holds, "{r:?}");
}

#[test]
fn terminal_condition_rejects_unordered_times() {
    let p = preset("ou").unwrap();
    assert!(terminal_condition_probe(&p.problem, &p.x, &[0.5, 0.4], 1.0).is_err());
    assert!(terminal_condition_probe(&p.problem, &p.x, &[0.5, 1.0], 1.0).is_err());
}

#[test]
fn growth_exponents() {
    let dir = SpectralVector::basis(1, 1, 1.0);
    let mags = [1.0, 2.0, 4.0, 8.0, 16.0];
    let ou = preset("ou").unwrap().problem;
    let r = growth_probe(&ou, 0.0, &dir, &mags).unwrap();
    assert!(r.exponent > 0.5 && r.holds, "{r:?}");

    let mut constant = ou.clone();
    constant.terminal = TerminalFunctional::Constant { kappa: 2.0 };
    let r = growth_probe(&constant, 0.0, &dir, &mags).unwrap();
    assert!(r.exponent.abs() < 1e-12, "{r:?}");

    let mut sine = ou.clone();
    sine.terminal = TerminalFunctional::SinMode { k: 1 };
    let r = growth_probe(&sine, 0.0, &dir, &mags).unwrap();
    assert!(
        r.rows.iter().all(|row| row.u.abs() <= 1.0) && r.exponent < 0.3,
        "{r:?}"
    );
}

fn fd_grid(t0: f64) -> Grid1D {
    Grid1D::new(-8.0, 8.0, 401, 200, t0, 1.0).unwrap()
}

#[test]
fn oracle_compare_gaussian_moment() {
    let p = with_paths(preset("heat_d1").unwrap().problem, 100_000);
    let fd = solve_semilinear_fd(
        &FdModel::from_forward(&p.forward).unwrap(),
        &p.driver,
        &p.terminal,
        &fd_grid(0.0),
    )
    .unwrap();
    let pts = [(0.0, 0.5), (0.0, 1.0), (0.5, 1.0)];
    let r = oracle_compare(&p, &fd, &pts).unwrap();
    assert!(r.max_relative_error <= 0.02, "{r:?}");
    for row in &r.rows {
        let exact = row.x * row.x + 1.0 - row.t;
        assert!((row.reference - exact).abs() <= 1e-3 * exact);
    }
}

#[test]
fn oracle_compare_sine_driver() {
    let p = with_paths(preset("semilinear_sine").unwrap().problem, 100_000);
    let fd = solve_semilinear_fd(
        &FdModel::from_forward(&p.forward).unwrap(),
        &p.driver,
        &p.terminal,
        &fd_grid(0.0),
    )
    .unwrap();
    let pts = [(0.0, -1.0), (0.0, 0.0), (0.0, 1.0), (0.5, -1.0), (0.5, 0.0)];
    let r = oracle_compare(&p, &fd, &pts).unwrap();
    assert!(r.max_relative_error <= 0.05, "{r:?}");
}

#[test]
fn oracle_compare_linear_y_three_ways() {
    let rho = 1.0;
    let forward = ou_model(1.0, 1.0).unwrap();
    let terminal = TerminalFunctional::Mode { k: 1, scale: 1.0 }.shifted(2.0);
    let driver = DriverSpec::LinearY { rho };
    let p = PdeProblem::new(
        forward.clone(),
        driver.clone(),
        terminal.clone(),
        1.0,
        settings(100_000, 50, 1, 3),
    )
    .unwrap();
    let fd = solve_semilinear_fd(
        &FdModel::from_forward(&forward).unwrap(),
        &driver,
        &terminal,
        &fd_grid(0.0),
    )
    .unwrap();
    let x = 0.5;
    let r = oracle_compare(&p, &fd, &[(0.0, x)]).unwrap();
    let row = r.rows[0];
    // f = rho y is the linear driver with a = -rho.
    let lin = LinearDriver::constant(-rho, 0.0, vec![0.0]);
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let ens = forward
        .simulate_seeded(&grid, &SpectralVector::new(vec![x]).unwrap(), 100_000, 4)
        .unwrap();
    let gamma = gamma_paths(&lin, &ens).unwrap();
    let explicit = solve_linear_explicit(&lin, &terminal, &ens, &gamma).unwrap();
    // Exact: e^{-rho} (e^{-1} x + 2).
    let exact = (-rho).exp() * ((-1.0f64).exp() * x + 2.0);
    assert!(
        (row.reference - exact).abs() <= 1e-3 * exact,
        "{} vs {exact}",
        row.reference
    );
    let tol = 0.02 * exact;
    assert!((row.u - exact).abs() <= tol, "{} vs {exact}", row.u);
    assert!(
        (explicit.y0 - exact).abs() <= tol,
        "{} vs {exact}",
        explicit.y0
    );
}

#[test]
fn oracle_compare_outside_domain() {
    let p = preset("heat_d8").unwrap();
    let fd_model_err = FdModel::from_forward(&p.problem.forward);
    assert!(fd_model_err.is_err());
    let frozen = preset("frozen").unwrap().problem;
    assert!(FdModel::from_forward(&frozen.forward).is_err());
    let heat1 = preset("heat_d1").unwrap().problem;
    let fd = solve_semilinear_fd(
        &FdModel::from_forward(&heat1.forward).unwrap(),
        &heat1.driver,
        &heat1.terminal,
        &fd_grid(0.0),
    )
    .unwrap();
    assert!(oracle_compare(&p.problem, &fd, &[(0.0, 0.0)]).is_err());
    let _ = closed_form;
    let _ = forward_model;
}
