//! Regular and singular controls.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SmpError};
use crate::grid::{Schedule, TimeGrid};
use crate::model::snap;
use crate::regime_chain::Regime;

/// Inputs available to a feedback rule at `(t_k, particle)`.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackInput {
    pub t: f64,
    pub step: usize,
    pub x: f64,
    /// Empirical mean-field value `μ_k`.
    pub mean_field: f64,
    pub regime: Regime,
    /// First-order adjoint value from a previous sweep, when available.
    pub adjoint: Option<f64>,
}

pub trait FeedbackLaw: Send + Sync + fmt::Debug {
    fn control(&self, input: &FeedbackInput) -> f64;

    /// Whether the rule reads [`FeedbackInput::adjoint`].
    fn needs_adjoint(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub enum OpenLoop {
    /// One value per step, shared by all particles.
    Common(Vec<f64>),
    /// `particles × steps` table, row-major.
    PerParticle {
        particles: usize,
        steps: usize,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub enum RegularControl {
    OpenLoop(OpenLoop),
    Feedback(Arc<dyn FeedbackLaw>),
}

impl RegularControl {
    pub fn constant(value: f64) -> Self {
        RegularControl::Feedback(Arc::new(ConstantLaw(value)))
    }

    pub fn feedback<L: FeedbackLaw + 'static>(law: L) -> Self {
        RegularControl::Feedback(Arc::new(law))
    }

    pub fn needs_adjoint(&self) -> bool {
        matches!(self, RegularControl::Feedback(law) if law.needs_adjoint())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AtomSize {
    Common(f64),
    PerParticle(Vec<f64>),
}

/// Lump increment of `ξ` at `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub time: f64,
    pub size: AtomSize,
}

/// Nondecreasing singular control: atoms plus an optional per-step density
/// (rate, shared by all particles).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SingularControl {
    pub atoms: Vec<Atom>,
    pub density: Option<Vec<f64>>,
}

impl SingularControl {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn common_atom(time: f64, size: f64) -> Self {
        Self {
            atoms: vec![Atom {
                time,
                size: AtomSize::Common(size),
            }],
            density: None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| match &a.size {
            AtomSize::Common(v) => *v == 0.0,
            AtomSize::PerParticle(v) => v.iter().all(|x| *x == 0.0),
        }) && self
            .density
            .as_ref()
            .is_none_or(|d| d.iter().all(|x| *x == 0.0))
    }

    /// Increments `Δξ_k` per particle. The mass of step `k` sits at grid
    /// point `t_{k+1}`: atoms are moved to the first grid point at or after
    /// their time and density mass over `(t_k, t_{k+1}]` is lumped at its end.
    pub fn increments(&self, grid: &TimeGrid, particles: usize) -> Result<Vec<f64>> {
        let m = grid.steps();
        let mut out = vec![0.0; particles * m];
        if let Some(d) = &self.density {
            if d.len() != m {
                return Err(SmpError::Shape(format!(
                    "singular density has {} entries, grid has {m} steps",
                    d.len()
                )));
            }
            for (k, &rate) in d.iter().enumerate() {
                if !(rate >= 0.0) {
                    return Err(SmpError::InvalidInput(format!(
                        "singular density must be non-negative (step {k}: {rate})"
                    )));
                }
                for n in 0..particles {
                    out[n * m + k] += rate * grid.dt();
                }
            }
        }
        for atom in &self.atoms {
            let k = grid.first_point_at_or_after(atom.time) - 1;
            match &atom.size {
                AtomSize::Common(v) => {
                    check_increment(*v)?;
                    for n in 0..particles {
                        out[n * m + k] += v;
                    }
                }
                AtomSize::PerParticle(vs) => {
                    if vs.len() != particles {
                        return Err(SmpError::Shape(format!(
                            "atom at t={} has {} sizes for {particles} particles",
                            atom.time,
                            vs.len()
                        )));
                    }
                    for (n, v) in vs.iter().enumerate() {
                        check_increment(*v)?;
                        out[n * m + k] += v;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn check_increment(v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SmpError::InvalidInput(format!(
            "singular increments must be finite and non-negative, got {v}"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct ControlPair {
    pub regular: RegularControl,
    pub singular: SingularControl,
}

impl ControlPair {
    pub fn new(regular: RegularControl, singular: SingularControl) -> Self {
        Self { regular, singular }
    }

    pub fn regular_only(regular: RegularControl) -> Self {
        Self::new(regular, SingularControl::none())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantLaw(pub f64);

impl FeedbackLaw for ConstantLaw {
    fn control(&self, _input: &FeedbackInput) -> f64 {
        self.0
    }
}

/// Inter-bank optimal-rate rule `u = b(α) p + ρ(μ - x)` with `p` taken either
/// from the Riccati representation `p = -η(t)(x - μ)` or from a solved adjoint.
#[derive(Debug, Clone)]
pub struct InterbankRate {
    /// `b(t, regime)` per regime.
    pub gain: Vec<Schedule>,
    pub horizon: f64,
    pub rho: f64,
    pub source: AdjointSource,
    /// Snap the result to these values when present.
    pub snap_to: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum AdjointSource {
    /// `η` on the simulation grid (`M + 1` values).
    Riccati(Vec<f64>),
    Solved,
}

impl FeedbackLaw for InterbankRate {
    fn control(&self, input: &FeedbackInput) -> f64 {
        let p = match &self.source {
            AdjointSource::Riccati(eta) => -eta[input.step] * (input.x - input.mean_field),
            AdjointSource::Solved => input.adjoint.unwrap_or(0.0),
        };
        let gain = self.gain[input.regime.index().min(self.gain.len() - 1)].at(input.t, self.horizon);
        let u = gain * p + self.rho * (input.mean_field - input.x);
        match &self.snap_to {
            Some(values) => snap(values, u),
            None => u,
        }
    }

    fn needs_adjoint(&self) -> bool {
        matches!(self.source, AdjointSource::Solved)
    }
}

/// `base + offsets[k]`.
#[derive(Debug, Clone)]
pub struct OffsetLaw {
    pub base: Arc<dyn FeedbackLaw>,
    pub offsets: Vec<f64>,
}

impl OffsetLaw {
    pub fn uniform(base: Arc<dyn FeedbackLaw>, offset: f64, steps: usize) -> Self {
        Self {
            base,
            offsets: vec![offset; steps],
        }
    }
}

impl FeedbackLaw for OffsetLaw {
    fn control(&self, input: &FeedbackInput) -> f64 {
        self.base.control(input) + self.offsets[input.step.min(self.offsets.len() - 1)]
    }

    fn needs_adjoint(&self) -> bool {
        self.base.needs_adjoint()
    }
}

/// `scale * base + offsets[k]`.
#[derive(Debug, Clone)]
pub struct ScaledLaw {
    pub base: Arc<dyn FeedbackLaw>,
    pub scale: f64,
    pub offsets: Vec<f64>,
}

impl FeedbackLaw for ScaledLaw {
    fn control(&self, input: &FeedbackInput) -> f64 {
        self.scale * self.base.control(input)
            + self.offsets[input.step.min(self.offsets.len() - 1)]
    }

    fn needs_adjoint(&self) -> bool {
        self.base.needs_adjoint()
    }
}
