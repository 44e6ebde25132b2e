mod common;

use smp_core::model::{validate_model, ControlModel, ControlSet, Partials, Point};
use smp_core::Regime;

use common::*;

/// Inter-bank model whose reported `∂f/∂x` is off by one.
struct WrongFx(smp_core::model::InterbankModel);

impl ControlModel for WrongFx {
    fn name(&self) -> &str {
        "wrong-fx"
    }
    fn regimes(&self) -> usize {
        self.0.regimes()
    }
    fn x0(&self) -> f64 {
        self.0.x0()
    }
    fn horizon(&self) -> f64 {
        self.0.horizon()
    }
    fn control_set(&self) -> &ControlSet {
        self.0.control_set()
    }
    fn drift(&self, p: &Point) -> Partials {
        self.0.drift(p)
    }
    fn diffusion(&self, p: &Point) -> Partials {
        self.0.diffusion(p)
    }
    fn jump(&self, p: &Point, target: Regime) -> Partials {
        self.0.jump(p, target)
    }
    fn singular_coefficient(&self, t: f64, regime: Regime) -> f64 {
        self.0.singular_coefficient(t, regime)
    }
    fn singular_cost(&self, t: f64) -> f64 {
        self.0.singular_cost(t)
    }
    fn running_cost(&self, p: &Point) -> Partials {
        let mut f = self.0.running_cost(p);
        f.dx += 1.0;
        f
    }
    fn terminal_cost(&self, x: f64, y: f64, regime: Regime) -> Partials {
        self.0.terminal_cost(x, y, regime)
    }
    fn mean_field(&self, x: f64) -> (f64, f64) {
        self.0.mean_field(x)
    }
}

#[test]
fn interbank_partials_agree_with_differences() {
    let report = validate_model(&unit_model(), 100, 3);
    assert!(report.passed);
    assert!(report.into_result().is_ok());
}

#[test]
fn wrong_partial_is_named() {
    let report = validate_model(&WrongFx(unit_model()), 50, 3);
    assert!(!report.passed);
    let failing: Vec<&str> = report.failures().map(|e| e.name.as_str()).collect();
    assert_eq!(failing, vec!["f_x"]);
    let err = report.into_result().unwrap_err().to_string();
    assert!(err.contains("f_x"), "{err}");
}

#[test]
fn generic_criterion_is_negated_application_cost() {
    // application: running ½u² - ρu(y-x) + ε/2 (y-x)², terminal β/2 (y-x)², transaction κ dξ
    let params = unit_params();
    let model = unit_model();
    for &(x, y, u) in &[(0.3, 1.1, -0.4), (2.0, -1.0, 1.5), (1.0, 1.0, 0.0)] {
        let pt = Point::new(0.2, x, y, u, Regime::from_index(0));
        let app_running = 0.5 * u * u - params.rho * u * (y - x) + 0.5 * params.epsilon * (y - x).powi(2);
        assert!((model.running_cost(&pt).value + app_running).abs() < 1e-14);
        let app_terminal = 0.5 * params.beta * (y - x).powi(2);
        assert!((model.terminal_cost(x, y, Regime::from_index(0)).value + app_terminal).abs() < 1e-14);
    }
    assert_eq!(model.singular_cost(0.4), -1.0);
    assert_eq!(model.singular_coefficient(0.4, Regime::from_index(0)), -1.0);
}
