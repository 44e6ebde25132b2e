mod common;

use smp_core::adjoint::*;
use smp_core::control::{ControlPair, RegularControl};
use smp_core::forward_sim::simulate;
use smp_core::model::{interbank_model, ControlModel, ControlSet, Partials, Point, Quadratic};
use smp_core::oracle::bsde_residual;
use smp_core::{stats, GeneratorMatrix, Regime, Schedule, TimeGrid};

use common::*;

/// `|mean| ≤ 3 SE + floor`, the floor absorbing roundoff where the spread
/// vanishes (all particles share `X_0`).
fn mean_within(p: &[f64], floor: f64) -> bool {
    stats::mean(p).abs() <= 3.0 * stats::std_error(p) + floor
}

fn two_regime(a: [f64; 2]) -> smp_core::model::InterbankParams {
    let mut p = unit_params();
    p.generator = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
    p.a = a.iter().map(|&v| Schedule::Constant(v)).collect();
    p.b = vec![Schedule::Constant(1.0); 2];
    p.c = vec![Schedule::Constant(1.0); 2];
    p
}

fn rms_diff(a: &AdjointSample, b: &AdjointSample) -> f64 {
    let mut s = 0.0;
    for k in 0..=a.steps() {
        for (x, y) in a.p_at(k).iter().zip(b.p_at(k)) {
            s += (x - y).powi(2);
        }
    }
    (s / ((a.steps() + 1) * a.particles()) as f64).sqrt()
}

#[test]
fn explicit_adjoint_structure() {
    let params = unit_params();
    let ens = riccati_ensemble(&params, 50, 2000, 1);
    let (adj, ric) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
    assert_eq!(ric.eta[50], params.beta);
    for k in 0..=50 {
        for n in 0..2000 {
            assert_eq!(adj.q(n, k), -ric.eta[k] * params.sigma);
            assert_eq!(adj.s(n, k, 0), 0.0);
        }
        assert!(mean_within(adj.p_at(k), 1e-12));
    }
    // terminal adjoint equals h_x + E[h_y] exactly
    let target = terminal_adjoint(&interbank_model(params).unwrap(), &ens);
    for (n, want) in target.iter().enumerate() {
        assert!((adj.p(n, 50) - want).abs() <= 1e-14);
    }
}

#[test]
fn explicit_residual_first_order() {
    let params = unit_params();
    let model = unit_model();
    let residual = |m: usize| {
        let ens = riccati_ensemble(&params, m, 4000, 17);
        let (adj, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
        bsde_residual(&model, &trivial(), &ens, &adj).unwrap()
    };
    let coarse = residual(50);
    let fine = residual(100);
    let ratio = coarse.aggregate / fine.aggregate;
    assert!((1.4..=2.6).contains(&ratio), "ratio {ratio}");
    assert!(fine.terminal < 1e-12);
}

#[test]
fn explicit_rejects_regime_dependent_rate() {
    let params = two_regime([1.0, 3.0]);
    let ens = riccati_ensemble(&two_regime([2.0, 2.0]), 10, 50, 0);
    assert!(matches!(
        solve_adjoint_interbank_explicit(&params, &ens),
        Err(smp_core::SmpError::UnsupportedClass(_))
    ));
}

#[test]
fn lsmc_matches_riccati_representation() {
    let params = unit_params();
    let model = unit_model();
    let ens = riccati_ensemble(&params, 50, 5000, 2);
    let (explicit, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
    let lsmc = solve_adjoint_lsmc(&model, &trivial(), &ens, &LsmcOptions::default()).unwrap();
    assert!(rms_diff(&lsmc, &explicit) <= 0.01);
    for k in 0..=50 {
        assert!(mean_within(lsmc.p_at(k), 1e-12), "step {k}");
    }
}

#[test]
fn driver_free_bsde_is_constant() {
    let model = affine(
        linear(0.1, 0.0, 0.0, 0.0),
        linear(0.2, 0.0, 0.0, 0.0),
        Quadratic::default(),
        Quadratic { x: 0.7, ..Default::default() },
    );
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let ens = simulate(&model, &trivial(), &ControlPair::regular_only(RegularControl::constant(0.0)), &grid, 300, 1).unwrap();
    let adj = solve_adjoint_lsmc(&model, &trivial(), &ens, &LsmcOptions::default()).unwrap();
    for k in 0..=20 {
        for n in 0..300 {
            assert!((adj.p(n, k) - 0.7).abs() < 1e-12);
            assert!(adj.q(n, k).abs() < 1e-12);
        }
    }
    let res = bsde_residual(&model, &trivial(), &ens, &adj).unwrap();
    assert!(res.aggregate < 1e-12);

    // negative control: shifting p breaks the terminal condition
    let mut shifted = adj.clone();
    for k in 0..=20 {
        for v in shifted.p_at_mut(k) {
            *v += 1.0;
        }
    }
    let bad = bsde_residual(&model, &trivial(), &ens, &shifted).unwrap();
    assert!(bad.aggregate > 0.5);
}

#[test]
fn volterra_degenerate_regimes() {
    let params = two_regime([1.0, 1.0]);
    let ens = riccati_ensemble(&params, 50, 4000, 3);
    let sol = solve_volterra_mean(&params, &ens, &VolterraOptions::default()).unwrap();
    assert!(sol.m.iter().all(|m| m.abs() < 1e-10));
    assert!(sol.residual <= VolterraOptions::default().tol);
    let (explicit, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
    let scale = stats::rms(explicit.p_at(50));
    assert!(rms_diff(&sol.adjoint, &explicit) <= 0.02 * scale);
}

#[test]
fn volterra_mean_zero_for_switching_rates() {
    let params = two_regime([1.0, 3.0]);
    let ens = riccati_ensemble(&two_regime([2.0, 2.0]), 50, 10_000, 3);
    let sol = solve_volterra_mean(&params, &ens, &VolterraOptions::default()).unwrap();
    assert!(sol.residual <= VolterraOptions::default().tol);
    // the first grid point carries an O(h) bias with zero spread, see notes
    for k in 1..=50 {
        assert!(mean_within(sol.adjoint.p_at(k), 1e-12), "step {k}");
    }
}

#[test]
fn volterra_reports_non_convergence() {
    let params = two_regime([1.0, 3.0]);
    let ens = riccati_ensemble(&two_regime([2.0, 2.0]), 20, 500, 3);
    let opts = VolterraOptions {
        max_iterations: 1,
        ..Default::default()
    };
    assert!(matches!(
        solve_volterra_mean(&params, &ens, &opts),
        Err(smp_core::SmpError::NoConvergence { .. })
    ));
}

#[test]
fn second_order_interbank_closed_form() {
    let params = unit_params();
    let model = unit_model();
    let m = 400;
    let ens = simulate(
        &model,
        &trivial(),
        &ControlPair::regular_only(RegularControl::constant(0.0)),
        &TimeGrid::new(1.0, m).unwrap(),
        100,
        1,
    )
    .unwrap();
    let (adj, _) = solve_adjoint_interbank_explicit(&params, &ens).unwrap();
    let field = solve_second_order(&model, &trivial(), &ens, &adj, 1e-9).unwrap();
    // -P' = -2aP - ε, P(T) = -β with a = ε = 1, β = 2
    for k in 0..=m {
        let t = k as f64 / m as f64;
        let want = (-2.0 * (1.0 - t)).exp() * (-2.0 + 0.5) - 0.5;
        assert!(((field.cap_p(0, k) - want) / want).abs() < 1e-9);
        assert_eq!(field.cap_s(0, 0, k), 0.0);
    }
}

#[test]
fn second_order_linear_source() {
    let coeffs = SecondOrderCoefficients::constant(10, &[0.0], &[0.0], &[vec![0.0]], &[-0.3], &[-2.0]);
    let grid = TimeGrid::new(2.0, 10).unwrap();
    let field = solve_second_order_table(&coeffs, &GeneratorMatrix::trivial(), &grid).unwrap();
    for k in 0..=10 {
        let want = -2.0 - 0.3 * (2.0 - grid.time(k));
        assert!((field.cap_p(0, k) - want).abs() < 1e-12);
    }
}

/// Mean-reverting model with running reward `-x⁴`, whose `H_xx` is random.
struct Quartic(ControlSet);

impl ControlModel for Quartic {
    fn name(&self) -> &str {
        "quartic"
    }
    fn regimes(&self) -> usize {
        1
    }
    fn x0(&self) -> f64 {
        0.5
    }
    fn horizon(&self) -> f64 {
        1.0
    }
    fn control_set(&self) -> &ControlSet {
        &self.0
    }
    fn drift(&self, p: &Point) -> Partials {
        Partials { value: -p.x + p.u, dx: -1.0, du: 1.0, ..Default::default() }
    }
    fn diffusion(&self, _p: &Point) -> Partials {
        Partials::constant(0.3)
    }
    fn jump(&self, _p: &Point, _target: Regime) -> Partials {
        Partials::default()
    }
    fn singular_coefficient(&self, _t: f64, _regime: Regime) -> f64 {
        0.0
    }
    fn singular_cost(&self, _t: f64) -> f64 {
        0.0
    }
    fn running_cost(&self, p: &Point) -> Partials {
        Partials {
            value: -p.x.powi(4) - 0.5 * p.u * p.u,
            dx: -4.0 * p.x.powi(3),
            du: -p.u,
            dxx: -12.0 * p.x * p.x,
            ..Default::default()
        }
    }
    fn terminal_cost(&self, _x: f64, _y: f64, _regime: Regime) -> Partials {
        Partials::default()
    }
    fn mean_field(&self, x: f64) -> (f64, f64) {
        (x, 1.0)
    }
}

#[test]
fn second_order_rejects_dispersed_coefficients() {
    let model = Quartic(ControlSet::interval(-1.0, 1.0, 21).unwrap());
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let ens = simulate(&model, &trivial(), &ControlPair::regular_only(RegularControl::constant(0.0)), &grid, 200, 1).unwrap();
    let adj = solve_adjoint_lsmc(&model, &trivial(), &ens, &LsmcOptions::default()).unwrap();
    let res = solve_second_order(&model, &trivial(), &ens, &adj, 1e-9);
    assert!(matches!(res, Err(smp_core::SmpError::UnsupportedClass(_))), "{res:?}");
}
