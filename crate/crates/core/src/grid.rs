use serde::{Deserialize, Serialize};

use crate::error::{Result, SmpError};

/// Uniform grid `t_k = k T / M`, `k = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SmpError::InvalidInput(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(SmpError::InvalidInput("grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Index of the step `[t_k, t_{k+1})` containing `t` (clamped to the grid).
    pub fn step_of(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let k = (t / self.dt()).floor() as usize;
        k.min(self.steps - 1)
    }

    /// First grid index `k >= 1` with `t_k >= t`.
    pub fn first_point_at_or_after(&self, t: f64) -> usize {
        let raw = (t / self.dt() - 1e-9).ceil();
        (raw.max(1.0) as usize).min(self.steps)
    }

    pub fn refined(&self, factor: usize) -> Self {
        Self {
            horizon: self.horizon,
            steps: self.steps * factor.max(1),
        }
    }
}

/// A coefficient that is either constant or piecewise constant on a uniform
/// partition of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    Table(Vec<f64>),
}

impl Schedule {
    pub fn at(&self, t: f64, horizon: f64) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Table(values) => {
                let n = values.len();
                if n == 0 {
                    return 0.0;
                }
                let k = ((t / horizon) * n as f64).floor();
                let k = if k < 0.0 { 0 } else { (k as usize).min(n - 1) };
                values[k]
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Schedule::Constant(v) => v.is_finite(),
            Schedule::Table(values) => values.iter().all(|v| v.is_finite()),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Table(values) => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Table(values) => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl From<f64> for Schedule {
    fn from(v: f64) -> Self {
        Schedule::Constant(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_exact() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(3), 1.0);
        assert!(g.times().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(f64::NAN, 4).is_err());
    }

    #[test]
    fn atom_times_snap_forward() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.first_point_at_or_after(0.5), 2);
        assert_eq!(g.first_point_at_or_after(0.51), 3);
        assert_eq!(g.first_point_at_or_after(0.0), 1);
        assert_eq!(g.first_point_at_or_after(7.0), 4);
    }

    #[test]
    fn table_schedule_is_piecewise_constant() {
        let s = Schedule::Table(vec![1.0, 2.0]);
        assert_eq!(s.at(0.0, 1.0), 1.0);
        assert_eq!(s.at(0.49, 1.0), 1.0);
        assert_eq!(s.at(0.5, 1.0), 2.0);
        assert_eq!(s.at(1.0, 1.0), 2.0);
    }
}
