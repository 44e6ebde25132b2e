//! Coefficient bundles of the control problem.
//!
//! Everything here is stated in the maximization convention: the controller
//! maximizes `E[ int f dt + int kappa dxi + h ]`. Models whose natural form is
//! a minimization flip signs at construction time (see [`interbank`]).

pub mod affine;
pub mod interbank;
pub mod validate;

use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmpError};
use crate::regime_chain::{GeneratorMatrix, Regime};

pub use affine::{AffineModel, AffineRegime, Linear, MeanFieldMap, Quadratic};
pub(crate) use interbank::interbank_model_unchecked;
pub use interbank::{interbank_model, interbank_model_relaxed, InterbankModel, InterbankParams};
pub use validate::{validate_model, ValidationEntry, ValidationReport};

/// Evaluation point `(t, x, y, u, regime)`; `y` is the mean-field argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub regime: Regime,
}

impl Point {
    pub fn new(t: f64, x: f64, y: f64, u: f64, regime: Regime) -> Self {
        Self { t, x, y, u, regime }
    }
}

/// A value together with its first partials in `(x, y, u)` and second
/// partials in `(x, y)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Partials {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub du: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
}

impl Partials {
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            ..Self::default()
        }
    }
}

impl Add for Partials {
    type Output = Partials;

    fn add(self, o: Partials) -> Partials {
        Partials {
            value: self.value + o.value,
            dx: self.dx + o.dx,
            dy: self.dy + o.dy,
            du: self.du + o.du,
            dxx: self.dxx + o.dxx,
            dxy: self.dxy + o.dxy,
            dyy: self.dyy + o.dyy,
        }
    }
}

impl Mul<f64> for Partials {
    type Output = Partials;

    fn mul(self, s: f64) -> Partials {
        Partials {
            value: self.value * s,
            dx: self.dx * s,
            dy: self.dy * s,
            du: self.du * s,
            dxx: self.dxx * s,
            dxy: self.dxy * s,
            dyy: self.dyy * s,
        }
    }
}

/// The regular control domain `A1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlSet {
    /// Closed interval with `points` equally spaced values used for grid scans.
    Interval { lo: f64, hi: f64, points: usize },
    /// Finite (non-convex) set of admissible values.
    Finite(Vec<f64>),
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64, points: usize) -> Result<Self> {
        let set = ControlSet::Interval { lo, hi, points };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlSet::Interval { lo, hi, points } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(SmpError::InvalidInput(format!(
                        "control interval [{lo}, {hi}] is not a finite closed interval"
                    )));
                }
                if *points == 0 || (*points == 1 && lo != hi) {
                    return Err(SmpError::InvalidInput(
                        "control interval needs at least two scan points".into(),
                    ));
                }
                Ok(())
            }
            ControlSet::Finite(values) => {
                if values.is_empty() || !values.iter().all(|v| v.is_finite()) {
                    return Err(SmpError::InvalidInput(
                        "finite control set must be non-empty and finite".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn is_interval(&self) -> bool {
        matches!(self, ControlSet::Interval { .. })
    }

    /// Values scanned by argmax / variational checks.
    pub fn grid(&self) -> Vec<f64> {
        match self {
            ControlSet::Interval { lo, hi, points } => {
                if *points <= 1 {
                    return vec![*lo];
                }
                let n = *points - 1;
                (0..=n)
                    .map(|i| if i == n { *hi } else { lo + (hi - lo) * i as f64 / n as f64 })
                    .collect()
            }
            ControlSet::Finite(values) => {
                let mut v = values.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
        }
    }

    /// Largest gap between neighbouring scan values.
    pub fn pitch(&self) -> f64 {
        let g = self.grid();
        g.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Nearest admissible value.
    pub fn project(&self, u: f64) -> f64 {
        match self {
            ControlSet::Interval { lo, hi, .. } => u.clamp(*lo, *hi),
            ControlSet::Finite(values) => snap(values, u),
        }
    }

    pub fn contains(&self, u: f64) -> bool {
        match self {
            ControlSet::Interval { lo, hi, .. } => u >= *lo && u <= *hi,
            ControlSet::Finite(values) => values.contains(&u),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        let g = self.grid();
        (g[0], g[g.len() - 1])
    }
}

/// Nearest element of `values` (first one on ties).
pub fn snap(values: &[f64], u: f64) -> f64 {
    let mut best = values[0];
    for &v in &values[1..] {
        if (v - u).abs() < (best - u).abs() {
            best = v;
        }
    }
    best
}

/// Coefficients `b, sigma, gamma, G, f, kappa, h, phi` of the state equation
/// and performance criterion, with analytic partials.
pub trait ControlModel: Send + Sync {
    fn name(&self) -> &str;

    /// Number of chain states `D`.
    fn regimes(&self) -> usize;

    fn x0(&self) -> f64;

    fn initial_regime(&self) -> Regime {
        Regime::default()
    }

    fn horizon(&self) -> f64;

    fn control_set(&self) -> &ControlSet;

    fn drift(&self, p: &Point) -> Partials;

    fn diffusion(&self, p: &Point) -> Partials;

    /// Component `gamma^j` of the jump coefficient, `j = target`.
    fn jump(&self, p: &Point, target: Regime) -> Partials;

    /// `G(t, regime)`, multiplying `d xi`.
    fn singular_coefficient(&self, t: f64, regime: Regime) -> f64;

    /// `kappa(t)` in the criterion.
    fn singular_cost(&self, t: f64) -> f64;

    fn running_cost(&self, p: &Point) -> Partials;

    /// `h(x, y, regime)`; the `du` slot is unused.
    fn terminal_cost(&self, x: f64, y: f64, regime: Regime) -> Partials;

    /// `(phi(x), phi'(x))`.
    fn mean_field(&self, x: f64) -> (f64, f64);

    fn mean_field_is_identity(&self) -> bool {
        false
    }
}

pub fn check_dimensions(model: &dyn ControlModel, gen: &GeneratorMatrix) -> Result<()> {
    if model.regimes() != gen.dim() {
        return Err(SmpError::Shape(format!(
            "model has {} regimes but generator has dimension {}",
            model.regimes(),
            gen.dim()
        )));
    }
    if model.initial_regime().index() >= gen.dim() {
        return Err(SmpError::InvalidInput(format!(
            "initial regime {} outside 1..{}",
            model.initial_regime(),
            gen.dim()
        )));
    }
    model.control_set().validate()
}
