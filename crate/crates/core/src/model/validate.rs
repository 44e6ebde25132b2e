//! Finite-difference audit of analytic partials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ControlModel, ControlSet, Partials, Point};
use crate::error::{Result, SmpError};
use crate::regime_chain::Regime;

pub const DERIVATIVE_TOLERANCE: f64 = 1e-6;
const STEP_FIRST: f64 = 1e-5;
const STEP_SECOND: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct ValidationEntry {
    /// Coefficient and partial, e.g. `f_x` or `gamma2_xy`.
    pub name: String,
    /// Largest `|analytic - fd| / max(1, |analytic|, |fd|)` seen.
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub worst_point: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub samples: usize,
    pub tolerance: f64,
    pub jump_components: usize,
    pub entries: Vec<ValidationEntry>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &ValidationEntry> {
        self.entries
            .iter()
            .filter(move |e| !(e.max_rel_error <= self.tolerance))
    }

    pub fn entry(&self, name: &str) -> Option<&ValidationEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Error describing the first failing coefficient, if any.
    pub fn into_result(self) -> Result<Self> {
        if let Some(e) = self.failures().next() {
            return Err(SmpError::DerivativeMismatch {
                coefficient: e.name.clone(),
                point: e.worst_point.clone(),
                analytic: e.worst_analytic,
                numeric: e.worst_numeric,
            });
        }
        Ok(self)
    }
}

struct Tracker {
    entries: Vec<ValidationEntry>,
}

impl Tracker {
    fn record(&mut self, name: String, analytic: f64, numeric: f64, point: &str) {
        let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        let err = if err.is_nan() { f64::INFINITY } else { err };
        let entry = match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => e,
            None => {
                self.entries.push(ValidationEntry {
                    name,
                    max_rel_error: 0.0,
                    max_abs_analytic: 0.0,
                    worst_point: point.to_string(),
                    worst_analytic: analytic,
                    worst_numeric: numeric,
                });
                self.entries.last_mut().unwrap()
            }
        };
        entry.max_abs_analytic = entry.max_abs_analytic.max(analytic.abs());
        if err > entry.max_rel_error {
            entry.max_rel_error = err;
            entry.worst_point = point.to_string();
            entry.worst_analytic = analytic;
            entry.worst_numeric = numeric;
        }
    }

    /// Compare all partials of a function of `(x, y, u)` at `p`.
    fn check_point<F>(&mut self, name: &str, p: &Point, with_u: bool, f: F)
    where
        F: Fn(f64, f64, f64) -> Partials,
    {
        let a = f(p.x, p.y, p.u);
        let v = |x: f64, y: f64, u: f64| f(x, y, u).value;
        let label = format!(
            "(t={:.6}, x={:.6}, y={:.6}, u={:.6}, {})",
            p.t, p.x, p.y, p.u, p.regime
        );
        let (x, y, u) = (p.x, p.y, p.u);
        let h = STEP_FIRST;
        self.record(
            format!("{name}_x"),
            a.dx,
            (v(x + h, y, u) - v(x - h, y, u)) / (2.0 * h),
            &label,
        );
        self.record(
            format!("{name}_y"),
            a.dy,
            (v(x, y + h, u) - v(x, y - h, u)) / (2.0 * h),
            &label,
        );
        if with_u {
            self.record(
                format!("{name}_u"),
                a.du,
                (v(x, y, u + h) - v(x, y, u - h)) / (2.0 * h),
                &label,
            );
        }
        let s = STEP_SECOND;
        let c = v(x, y, u);
        self.record(
            format!("{name}_xx"),
            a.dxx,
            (v(x + s, y, u) - 2.0 * c + v(x - s, y, u)) / (s * s),
            &label,
        );
        self.record(
            format!("{name}_yy"),
            a.dyy,
            (v(x, y + s, u) - 2.0 * c + v(x, y - s, u)) / (s * s),
            &label,
        );
        self.record(
            format!("{name}_xy"),
            a.dxy,
            (v(x + s, y + s, u) - v(x + s, y - s, u) - v(x - s, y + s, u) + v(x - s, y - s, u))
                / (4.0 * s * s),
            &label,
        );
    }
}

/// Check analytic partials of every coefficient against central differences
/// at `samples` random points.
pub fn validate_model(model: &dyn ControlModel, samples: usize, seed: u64) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = Tracker {
        entries: Vec::new(),
    };
    let x0 = model.x0();
    let (ulo, uhi) = match model.control_set() {
        ControlSet::Interval { lo, hi, .. } => (*lo, *hi),
        set => set.bounds(),
    };
    let d = model.regimes();
    for _ in 0..samples {
        let regime = Regime::from_index(rng.gen_range(0..d));
        let p = Point {
            t: rng.gen::<f64>() * model.horizon(),
            x: x0 + rng.gen_range(-2.0..2.0),
            y: x0 + rng.gen_range(-2.0..2.0),
            u: if uhi > ulo { rng.gen_range(ulo..uhi) } else { ulo },
            regime,
        };
        let at = |x, y, u| Point { x, y, u, ..p };
        tracker.check_point("b", &p, true, |x, y, u| model.drift(&at(x, y, u)));
        tracker.check_point("sigma", &p, true, |x, y, u| model.diffusion(&at(x, y, u)));
        for j in 0..d {
            let target = Regime::from_index(j);
            tracker.check_point(&format!("gamma{}", j + 1), &p, true, |x, y, u| {
                model.jump(&at(x, y, u), target)
            });
        }
        tracker.check_point("f", &p, true, |x, y, u| model.running_cost(&at(x, y, u)));
        tracker.check_point("h", &p, false, |x, y, _| model.terminal_cost(x, y, regime));

        let (_, dphi) = model.mean_field(p.x);
        let fd = (model.mean_field(p.x + STEP_FIRST).0 - model.mean_field(p.x - STEP_FIRST).0)
            / (2.0 * STEP_FIRST);
        tracker.record("phi_x".into(), dphi, fd, &format!("(x={:.6})", p.x));
    }
    let passed = tracker
        .entries
        .iter()
        .all(|e| e.max_rel_error <= DERIVATIVE_TOLERANCE);
    ValidationReport {
        model: model.name().to_string(),
        samples,
        tolerance: DERIVATIVE_TOLERANCE,
        jump_components: d,
        entries: tracker.entries,
        passed,
    }
}
