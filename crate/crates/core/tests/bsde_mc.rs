//! Backward solver against explicit solutions and the comparison and energy checks.

use fk_core::bsde::{
    apriori_check, comparison_check, stability_check, supersolution_residual, Monotonicity,
};
use fk_core::linear::{dominance_check, martingale_identity_check};
use fk_core::presets::{forward_model, ou_model};
use fk_core::stats::{combine_stderr, mean};
use fk_core::{
    gamma_paths, solve_backward, solve_linear_explicit, BsdePair, CoefficientField,
    DiagonalGenerator, DriverSpec, LinearDriver, PathEnsemble, RegressionBasis, SpectralVector,
    TerminalFunctional, TimeGrid,
};

fn ou(paths: usize, steps: usize, seed: u64) -> PathEnsemble {
    let grid = TimeGrid::new(0.0, 1.0, steps).unwrap();
    ou_model(1.0, 1.0)
        .unwrap()
        .simulate_seeded(&grid, &SpectralVector::new(vec![1.0]).unwrap(), paths, seed)
        .unwrap()
}

fn basis() -> RegressionBasis {
    RegressionBasis::default_for(1)
}

#[test]
fn linear_y_driver_matches_backward_ode() {
    // With no spatial dependence the scheme is the explicit ODE recursion.
    let y0 = |steps: usize| {
        let ens = ou(100, steps, 1);
        let sol = solve_backward(
            &DriverSpec::LinearY { rho: 1.0 },
            &TerminalFunctional::Constant { kappa: 1.0 },
            &ens,
            &basis(),
            1,
        )
        .unwrap();
        sol.y0
    };
    let exact = 0.36787944117144233;
    let (e50, e100) = ((y0(50) - exact).abs(), (y0(100) - exact).abs());
    assert!(e50 < 0.01, "{e50}");
    assert!(e100 < 0.6 * e50, "{e50} {e100}");
}

#[test]
fn linear_driver_matches_explicit_solution() {
    let lin = LinearDriver::constant(0.3, 0.1, vec![0.2]);
    let terminal = TerminalFunctional::Mode { k: 1, scale: 1.0 };
    let ens = ou(100_000, 50, 2);
    let sol = solve_backward(
        &DriverSpec::Linear(lin.clone()),
        &terminal,
        &ens,
        &basis(),
        1,
    )
    .unwrap();
    let gamma = gamma_paths(&lin, &ens).unwrap();
    let explicit = solve_linear_explicit(&lin, &terminal, &ens, &gamma).unwrap();
    let band = 3.0 * combine_stderr(sol.y0_stderr, explicit.stderr);
    assert!(
        (sol.y0 - explicit.y0).abs() <= band,
        "{} vs {} (band {band})",
        sol.y0,
        explicit.y0
    );

    let dom = dominance_check(&sol.y, &lin, &terminal, &ens, &gamma).unwrap();
    assert!(dom.holds);
    let mart = martingale_identity_check(&lin, &ens, &gamma, &sol.y).unwrap();
    assert!(mart.holds, "{} exceedances", mart.exceedances);
}

#[test]
fn zero_driver_is_terminal_mean() {
    let ens = ou(5_000, 20, 3);
    let g = TerminalFunctional::SinMode { k: 1 };
    let sol = solve_backward(&DriverSpec::Zero, &g, &ens, &basis(), 1).unwrap();
    let direct = mean(
        &(0..ens.paths())
            .map(|m| g.eval(ens.terminal(m)))
            .collect::<Vec<_>>(),
    );
    assert!((sol.y0 - direct).abs() < 1e-12, "{} vs {direct}", sol.y0);
}

#[test]
fn constant_basis_equals_nested_means() {
    let ens = ou(2_000, 10, 4);
    let driver = DriverSpec::SinY { scale: 0.5 };
    let g = TerminalFunctional::CosMode { k: 1 };
    let sol = solve_backward(&driver, &g, &ens, &RegressionBasis::constant(), 0).unwrap();
    // Without features every conditional mean is a plain mean.
    let dt = ens.grid().dt();
    let mut y = mean(
        &(0..ens.paths())
            .map(|m| g.eval(ens.terminal(m)))
            .collect::<Vec<_>>(),
    );
    for _ in 0..10 {
        y -= 0.5 * y.sin() * dt;
    }
    assert!((sol.y0 - y).abs() < 1e-12, "{} vs {y}", sol.y0);
}

#[test]
fn picard_refinement_is_second_order_small() {
    let ens = ou(20_000, 50, 5);
    let driver = DriverSpec::SinY { scale: 1.0 };
    let g = TerminalFunctional::CosMode { k: 1 };
    let a = solve_backward(&driver, &g, &ens, &basis(), 1).unwrap().y0;
    let b = solve_backward(&driver, &g, &ens, &basis(), 3).unwrap().y0;
    let dt = ens.grid().dt();
    // Each extra sweep moves Y_i by O(dt^2 L^2); over N steps the drift is O(dt L^2).
    assert!((a - b).abs() <= 50.0 * dt * dt, "{a} {b}");
}

#[test]
fn comparison_shift_propagates_through_linear_ode() {
    let ens = ou(100_000, 50, 6);
    let f = DriverSpec::LinearY { rho: 1.0 };
    let g1 = TerminalFunctional::Mode { k: 1, scale: 1.0 };
    let g2 = g1.clone().shifted(0.5);
    let r = comparison_check(
        BsdePair::new(&f, &g1),
        BsdePair::new(&f, &g2),
        &ens,
        &basis(),
        1,
    )
    .unwrap();
    assert!(r.weak_holds && r.strict_holds);
    assert!(
        (r.margin - 0.18393972058572117).abs() <= 3.0 * r.stderr,
        "{r:?}"
    );
}

#[test]
fn comparison_constant_driver_gap_is_strict() {
    let ens = ou(20_000, 50, 7);
    let f1 = DriverSpec::LinearY { rho: 0.5 };
    let f2 = f1.clone().shifted(-0.1);
    let g = TerminalFunctional::SinMode { k: 1 };
    let r = comparison_check(
        BsdePair::new(&f1, &g),
        BsdePair::new(&f2, &g),
        &ens,
        &basis(),
        1,
    )
    .unwrap();
    assert!(r.strict_applicable && r.strict_holds, "{r:?}");
}

#[test]
fn supersolution_shift_directions() {
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let model = forward_model(DiagonalGenerator::zero(1), 1, CoefficientField::zero()).unwrap();
    let ens = model
        .simulate_seeded(&grid, &SpectralVector::new(vec![0.0]).unwrap(), 10, 0)
        .unwrap();
    let sol = solve_backward(
        &DriverSpec::Zero,
        &TerminalFunctional::Constant { kappa: 2.0 },
        &ens,
        &basis(),
        1,
    )
    .unwrap();
    let exact = supersolution_residual(&sol.y, &sol.z, &DriverSpec::Zero, &ens, None).unwrap();
    assert_eq!(exact.residual.direction, Monotonicity::Constant);
    assert!(exact.residual.process.iter().all(|v| *v == 0.0));
    let shift = |sign: f64| -> Vec<f64> {
        (0..ens.paths())
            .flat_map(|m| (0..=10).map(move |i| (m, i)))
            .map(|(m, i)| sol.y_at(m, i) + sign * grid.time(i))
            .collect()
    };
    // Subtracting elapsed time makes I_s = s - t increasing.
    let down = supersolution_residual(&shift(-1.0), &sol.z, &DriverSpec::Zero, &ens, None).unwrap();
    assert_eq!(down.residual.direction, Monotonicity::Increasing);
    assert!(down.holds);
    let up = supersolution_residual(&shift(1.0), &sol.z, &DriverSpec::Zero, &ens, None).unwrap();
    assert_eq!(up.residual.direction, Monotonicity::Decreasing);
    assert!(!up.holds);
}

#[test]
fn apriori_constant_terminal_ratio_is_one() {
    let ens = ou(1_000, 10, 8);
    let g = TerminalFunctional::Constant { kappa: 1.5 };
    let sol = solve_backward(&DriverSpec::Zero, &g, &ens, &basis(), 1).unwrap();
    let r = apriori_check(&DriverSpec::Zero, &g, &ens, &sol, 1.0).unwrap();
    assert!(
        (r.lhs - 2.25).abs() < 1e-12 && (r.rhs - 2.25).abs() < 1e-12 && r.holds,
        "{r:?}"
    );
}

#[test]
fn stability_terminal_shift_bounded_by_growth_factor() {
    let ens = ou(20_000, 50, 9);
    let f = DriverSpec::LinearY { rho: 1.0 };
    let g1 = TerminalFunctional::Mode { k: 1, scale: 1.0 };
    let eps = 0.2;
    let g2 = g1.clone().shifted(eps);
    let r = stability_check(
        BsdePair::new(&f, &g1),
        BsdePair::new(&f, &g2),
        &ens,
        &basis(),
        1,
        f64::INFINITY,
    )
    .unwrap();
    assert!(r.lhs / (eps * eps) <= 1.0f64.exp().powi(2) + 0.1, "{r:?}");
}

#[test]
fn stability_driver_shift_scales_with_horizon() {
    let ens = ou(20_000, 50, 10);
    let lin = DriverSpec::Linear(LinearDriver::constant(0.3, 0.1, vec![0.2]));
    let g = TerminalFunctional::Mode { k: 1, scale: 1.0 };
    let eps = 0.1;
    let shifted = lin.clone().shifted(eps);
    let r = stability_check(
        BsdePair::new(&lin, &g),
        BsdePair::new(&shifted, &g),
        &ens,
        &basis(),
        1,
        f64::INFINITY,
    )
    .unwrap();
    // Linear growth factor e^{a T} bounds the propagated gap.
    let bound = (0.3f64).exp().powi(2) * (eps * 1.0).powi(2);
    assert!(r.lhs <= 1.1 * bound, "{r:?}, bound {bound}");
}
