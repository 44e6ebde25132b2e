//! Per-regime affine dynamics with quadratic costs, configurable from JSON.

use serde::{Deserialize, Serialize};

use super::{ControlModel, ControlSet, Partials, Point};
use crate::error::{Result, SmpError};
use crate::grid::Schedule;
use crate::regime_chain::Regime;

/// `c + x X + y Y + u U`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Linear {
    pub c: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
}

impl Linear {
    fn eval(&self, p: &Point) -> Partials {
        Partials {
            value: self.c + self.x * p.x + self.y * p.y + self.u * p.u,
            dx: self.x,
            dy: self.y,
            du: self.u,
            ..Partials::default()
        }
    }
}

/// `c + x X + y Y + u U + ½(xx X² + yy Y² + uu U²) + xy XY + xu XU + yu YU`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Quadratic {
    pub c: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub xx: f64,
    pub yy: f64,
    pub uu: f64,
    pub xy: f64,
    pub xu: f64,
    pub yu: f64,
}

impl Quadratic {
    fn eval(&self, x: f64, y: f64, u: f64) -> Partials {
        Partials {
            value: self.c
                + self.x * x
                + self.y * y
                + self.u * u
                + 0.5 * (self.xx * x * x + self.yy * y * y + self.uu * u * u)
                + self.xy * x * y
                + self.xu * x * u
                + self.yu * y * u,
            dx: self.x + self.xx * x + self.xy * y + self.xu * u,
            dy: self.y + self.yy * y + self.xy * x + self.yu * u,
            du: self.u + self.uu * u + self.xu * x + self.yu * y,
            dxx: self.xx,
            dxy: self.xy,
            dyy: self.yy,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanFieldMap {
    #[default]
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineRegime {
    pub drift: Linear,
    pub diffusion: Linear,
    /// One entry per target regime; missing entries are zero.
    pub jump: Vec<Linear>,
    pub singular: f64,
    pub running: Quadratic,
    /// Terminal cost in `(x, y)`; the `u` terms are ignored.
    pub terminal: Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineModel {
    pub regimes: Vec<AffineRegime>,
    #[serde(default = "zero_schedule")]
    pub kappa: Schedule,
    #[serde(default)]
    pub mean_field: MeanFieldMap,
    pub x0: f64,
    pub horizon: f64,
    pub control_set: ControlSet,
    #[serde(default = "one")]
    pub initial_regime: usize,
}

fn zero_schedule() -> Schedule {
    Schedule::Constant(0.0)
}

fn one() -> usize {
    1
}

impl AffineModel {
    /// Single-regime model with all coefficients zero.
    pub fn zero(x0: f64, horizon: f64, control_set: ControlSet) -> Self {
        Self {
            regimes: vec![AffineRegime::default()],
            kappa: zero_schedule(),
            mean_field: MeanFieldMap::Identity,
            x0,
            horizon,
            control_set,
            initial_regime: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(SmpError::InvalidInput("affine model needs a regime".into()));
        }
        if self.initial_regime == 0 || self.initial_regime > self.regimes.len() {
            return Err(SmpError::InvalidInput(format!(
                "initial regime {} outside 1..{}",
                self.initial_regime,
                self.regimes.len()
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(SmpError::InvalidInput("horizon must be positive".into()));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if r.jump.len() > self.regimes.len() {
                return Err(SmpError::Shape(format!(
                    "regime {} has {} jump components, expected at most {}",
                    i + 1,
                    r.jump.len(),
                    self.regimes.len()
                )));
            }
        }
        self.control_set.validate()
    }

    fn regime(&self, r: Regime) -> &AffineRegime {
        &self.regimes[r.index()]
    }
}

impl ControlModel for AffineModel {
    fn name(&self) -> &str {
        "affine"
    }

    fn regimes(&self) -> usize {
        self.regimes.len()
    }

    fn x0(&self) -> f64 {
        self.x0
    }

    fn initial_regime(&self) -> Regime {
        Regime::from_label(self.initial_regime).unwrap_or_default()
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    fn drift(&self, p: &Point) -> Partials {
        self.regime(p.regime).drift.eval(p)
    }

    fn diffusion(&self, p: &Point) -> Partials {
        self.regime(p.regime).diffusion.eval(p)
    }

    fn jump(&self, p: &Point, target: Regime) -> Partials {
        self.regime(p.regime)
            .jump
            .get(target.index())
            .map(|l| l.eval(p))
            .unwrap_or_default()
    }

    fn singular_coefficient(&self, _t: f64, regime: Regime) -> f64 {
        self.regime(regime).singular
    }

    fn singular_cost(&self, t: f64) -> f64 {
        self.kappa.at(t, self.horizon)
    }

    fn running_cost(&self, p: &Point) -> Partials {
        self.regime(p.regime).running.eval(p.x, p.y, p.u)
    }

    fn terminal_cost(&self, x: f64, y: f64, regime: Regime) -> Partials {
        let mut q = self.regime(regime).terminal;
        q.u = 0.0;
        q.uu = 0.0;
        q.xu = 0.0;
        q.yu = 0.0;
        q.eval(x, y, 0.0)
    }

    fn mean_field(&self, x: f64) -> (f64, f64) {
        match self.mean_field {
            MeanFieldMap::Identity => (x, 1.0),
            MeanFieldMap::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
        }
    }

    fn mean_field_is_identity(&self) -> bool {
        self.mean_field == MeanFieldMap::Identity
    }
}
