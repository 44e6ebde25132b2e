//! Inter-bank borrowing and lending with transaction costs.
//!
//! Reserve dynamics `dX = [a(t,α)(E[X] - X) + b(t,α) u] dt + σ dB - c(t,α) dξ`
//! with cost `E[ int ½u² - ρu(E[X]-X) + ε/2 (E[X]-X)² dt + β/2 (E[X(T)]-X(T))² + int κ dξ ]`
//! to be minimized. The model exposed here is the equivalent maximization:
//!
//! | field  | value                                  |
//! |--------|----------------------------------------|
//! | b      | `a(t,α)(y - x) + b(t,α) u`             |
//! | σ      | constant                               |
//! | γ      | 0                                      |
//! | G      | `-c(t,α)`                              |
//! | f      | `-½u² + ρu(y-x) - ε/2 (y-x)²`          |
//! | κ      | `-κ_app(t)`                            |
//! | h      | `-β/2 (y-x)²`                          |
//! | φ      | identity                               |

use serde::{Deserialize, Serialize};

use super::{ControlModel, ControlSet, Partials, Point};
use crate::error::{Result, SmpError};
use crate::grid::Schedule;
use crate::regime_chain::{GeneratorMatrix, Regime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterbankParams {
    /// Mean-reversion rate per regime.
    pub a: Vec<Schedule>,
    /// Control gain per regime.
    pub b: Vec<Schedule>,
    /// Transaction coefficient per regime.
    pub c: Vec<Schedule>,
    pub sigma: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub beta: f64,
    /// Transaction cost rate of the minimization problem.
    pub kappa: Schedule,
    pub x0: f64,
    pub horizon: f64,
    pub control_set: ControlSet,
    pub generator: GeneratorMatrix,
    /// 1-based starting regime.
    #[serde(default = "one")]
    pub initial_regime: usize,
}

fn one() -> usize {
    1
}

impl InterbankParams {
    /// Single-regime parameters with constant coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn single_regime(
        a: f64,
        b: f64,
        c: f64,
        sigma: f64,
        rho: f64,
        epsilon: f64,
        beta: f64,
        kappa: f64,
        x0: f64,
        horizon: f64,
    ) -> Self {
        Self {
            a: vec![a.into()],
            b: vec![b.into()],
            c: vec![c.into()],
            sigma,
            rho,
            epsilon,
            beta,
            kappa: kappa.into(),
            x0,
            horizon,
            control_set: ControlSet::Interval {
                lo: -10.0,
                hi: 10.0,
                points: 401,
            },
            generator: GeneratorMatrix::trivial(),
            initial_regime: 1,
        }
    }

    pub fn regimes(&self) -> usize {
        self.generator.dim()
    }

    pub fn a_at(&self, t: f64, regime: Regime) -> f64 {
        self.a[regime.index()].at(t, self.horizon)
    }

    pub fn b_at(&self, t: f64, regime: Regime) -> f64 {
        self.b[regime.index()].at(t, self.horizon)
    }

    pub fn c_at(&self, t: f64, regime: Regime) -> f64 {
        self.c[regime.index()].at(t, self.horizon)
    }

    pub fn kappa_at(&self, t: f64) -> f64 {
        self.kappa.at(t, self.horizon)
    }

    /// True when `a`, `b`, `c` do not depend on the regime.
    pub fn regime_independent(&self) -> bool {
        let same = |v: &Vec<Schedule>| v.windows(2).all(|w| w[0] == w[1]);
        same(&self.a) && same(&self.b) && same(&self.c)
    }

    /// Shape and finiteness checks plus `ρ² ≤ ε`, `β ≥ 0`.
    pub fn validate_shape(&self) -> Result<()> {
        let d = self.generator.dim();
        for (name, v) in [("a", &self.a), ("b", &self.b), ("c", &self.c)] {
            if v.len() != d {
                return Err(SmpError::Shape(format!(
                    "coefficient {name} has {} regimes, generator has {d}",
                    v.len()
                )));
            }
            if !v.iter().all(Schedule::is_finite) {
                return Err(SmpError::InvalidInput(format!("coefficient {name} not finite")));
            }
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("epsilon", self.epsilon),
            ("beta", self.beta),
            ("x0", self.x0),
        ] {
            if !v.is_finite() {
                return Err(SmpError::InvalidInput(format!("{name} not finite")));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(SmpError::InvalidInput("horizon must be positive".into()));
        }
        if self.initial_regime == 0 || self.initial_regime > d {
            return Err(SmpError::InvalidInput(format!(
                "initial regime {} outside 1..{d}",
                self.initial_regime
            )));
        }
        if self.rho * self.rho > self.epsilon {
            return Err(SmpError::Convexity {
                rho_sq: self.rho * self.rho,
                epsilon: self.epsilon,
            });
        }
        if self.beta < 0.0 {
            return Err(SmpError::InvalidInput("beta must be non-negative".into()));
        }
        self.control_set.validate()
    }

    /// Full model invariants: shape checks plus `ε > 0`, `β > 0`, `ρ > 0`.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if !(self.epsilon > 0.0 && self.beta > 0.0 && self.rho > 0.0) {
            return Err(SmpError::InvalidInput(format!(
                "need epsilon > 0, beta > 0, rho > 0 (got {}, {}, {})",
                self.epsilon, self.beta, self.rho
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InterbankModel {
    params: InterbankParams,
}

impl InterbankModel {
    pub fn params(&self) -> &InterbankParams {
        &self.params
    }
}

/// Build the maximization-form model of the inter-bank problem.
pub fn interbank_model(params: InterbankParams) -> Result<InterbankModel> {
    params.validate()?;
    Ok(InterbankModel { params })
}

/// Build the model after the shape checks only, admitting the degenerate
/// boundary cases `ε = ρ²`, `β = 0`, `ρ = 0`.
pub fn interbank_model_relaxed(params: InterbankParams) -> Result<InterbankModel> {
    params.validate_shape()?;
    Ok(InterbankModel { params })
}

pub(crate) fn interbank_model_unchecked(params: InterbankParams) -> InterbankModel {
    InterbankModel { params }
}

impl ControlModel for InterbankModel {
    fn name(&self) -> &str {
        "interbank"
    }

    fn regimes(&self) -> usize {
        self.params.regimes()
    }

    fn x0(&self) -> f64 {
        self.params.x0
    }

    fn initial_regime(&self) -> Regime {
        Regime::from_label(self.params.initial_regime).unwrap_or_default()
    }

    fn horizon(&self) -> f64 {
        self.params.horizon
    }

    fn control_set(&self) -> &ControlSet {
        &self.params.control_set
    }

    fn drift(&self, p: &Point) -> Partials {
        let a = self.params.a_at(p.t, p.regime);
        let b = self.params.b_at(p.t, p.regime);
        Partials {
            value: a * (p.y - p.x) + b * p.u,
            dx: -a,
            dy: a,
            du: b,
            ..Partials::default()
        }
    }

    fn diffusion(&self, _p: &Point) -> Partials {
        Partials::constant(self.params.sigma)
    }

    fn jump(&self, _p: &Point, _target: Regime) -> Partials {
        Partials::default()
    }

    fn singular_coefficient(&self, t: f64, regime: Regime) -> f64 {
        -self.params.c_at(t, regime)
    }

    fn singular_cost(&self, t: f64) -> f64 {
        -self.params.kappa_at(t)
    }

    fn running_cost(&self, p: &Point) -> Partials {
        let InterbankParams { rho, epsilon, .. } = self.params;
        let z = p.y - p.x;
        Partials {
            value: -0.5 * p.u * p.u + rho * p.u * z - 0.5 * epsilon * z * z,
            dx: -rho * p.u + epsilon * z,
            dy: rho * p.u - epsilon * z,
            du: -p.u + rho * z,
            dxx: -epsilon,
            dxy: epsilon,
            dyy: -epsilon,
        }
    }

    fn terminal_cost(&self, x: f64, y: f64, _regime: Regime) -> Partials {
        let beta = self.params.beta;
        let z = y - x;
        Partials {
            value: -0.5 * beta * z * z,
            dx: beta * z,
            dy: -beta * z,
            du: 0.0,
            dxx: -beta,
            dxy: beta,
            dyy: -beta,
        }
    }

    fn mean_field(&self, x: f64) -> (f64, f64) {
        (x, 1.0)
    }

    fn mean_field_is_identity(&self) -> bool {
        true
    }
}
