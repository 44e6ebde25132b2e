//! JSON experiment configuration. The schema is documented in
//! `docs/config.md`.

use serde::de::{self, Deserializer};
use serde::Deserialize;
use serde_json::value::RawValue;

use smp_core::control::{Atom, AtomSize, SingularControl};
use smp_core::model::{AffineRegime, ControlSet, MeanFieldMap};
use smp_core::oracle::AtomMenu;
use smp_core::{GeneratorMatrix, Schedule};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Interbank,
    Affine,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig<'a> {
    model: ModelKind,
    #[serde(borrow)]
    params: &'a RawValue,
    generator: GeneratorMatrix,
    grid: GridBlock,
    particles: usize,
    seed: u64,
    #[serde(default)]
    control: ControlBlock,
    #[serde(default)]
    adjoint: AdjointBlock,
    #[serde(default)]
    checks: ChecksBlock,
    #[serde(default)]
    oracle: Option<OracleBlock>,
    #[serde(default)]
    validate: ValidateBlock,
    #[serde(default)]
    output: OutputBlock,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub generator: GeneratorMatrix,
    pub grid: GridBlock,
    pub particles: usize,
    pub seed: u64,
    pub control: ControlBlock,
    pub adjoint: AdjointBlock,
    pub checks: ChecksBlock,
    pub oracle: Option<OracleBlock>,
    pub validate: ValidateBlock,
    pub output: OutputBlock,
}

#[derive(Debug, Clone)]
pub enum ModelParams {
    Interbank(InterbankBlock),
    Affine(AffineBlock),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "M")]
    pub steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterbankBlock {
    pub a: Vec<Schedule>,
    pub b: Vec<Schedule>,
    pub c: Vec<Schedule>,
    pub sigma: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub kappa: Schedule,
    pub x0: f64,
    #[serde(default)]
    pub control_set: Option<ControlSet>,
    #[serde(default = "one")]
    pub initial_regime: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineBlock {
    pub regimes: Vec<AffineRegime>,
    #[serde(default = "zero_schedule")]
    pub kappa: Schedule,
    #[serde(default)]
    pub mean_field: MeanFieldMap,
    pub x0: f64,
    pub control_set: ControlSet,
    #[serde(default = "one")]
    pub initial_regime: usize,
}

fn one() -> usize {
    1
}

fn zero_schedule() -> Schedule {
    Schedule::Constant(0.0)
}

/// Regular part of the control.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularBlock {
    Constant {
        value: f64,
    },
    OpenLoop {
        values: Vec<f64>,
    },
    /// Inter-bank rate with `η` from the Riccati equation.
    Riccati {
        #[serde(default)]
        offset: f64,
    },
    /// Inter-bank rate with `p` from the adjoint solver, iterated `sweeps`
    /// times on common noise.
    Mp {
        #[serde(default)]
        offset: f64,
        #[serde(default = "two")]
        sweeps: usize,
    },
}

fn two() -> usize {
    2
}

impl Default for RegularBlock {
    fn default() -> Self {
        RegularBlock::Constant { value: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomBlock {
    pub time: f64,
    pub size: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularBlock {
    #[serde(default)]
    pub atoms: Vec<AtomBlock>,
    #[serde(default)]
    pub density: Option<Vec<f64>>,
}

impl SingularBlock {
    pub fn to_control(&self) -> SingularControl {
        SingularControl {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    time: a.time,
                    size: AtomSize::Common(a.size),
                })
                .collect(),
            density: self.density.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    #[serde(default)]
    pub regular: RegularBlock,
    #[serde(default)]
    pub singular: SingularBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    #[default]
    Auto,
    Explicit,
    Lsmc,
    Volterra,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointBlock {
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default = "two")]
    pub basis_order: usize,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_fixed_point_tol")]
    pub tol: f64,
    /// Allowed spread of the second-order coefficients across particles.
    #[serde(default = "default_second_order_tol")]
    pub second_order_tol: f64,
}

fn default_iterations() -> usize {
    500
}

fn default_fixed_point_tol() -> f64 {
    1e-10
}

fn default_second_order_tol() -> f64 {
    1e-8
}

impl Default for AdjointBlock {
    fn default() -> Self {
        Self {
            solver: SolverChoice::Auto,
            basis_order: 2,
            max_iterations: default_iterations(),
            tol: default_fixed_point_tol(),
            second_order_tol: default_second_order_tol(),
        }
    }
}

/// A tolerance: a non-negative number, `"inf"`, or `"auto"` (`5h + 3 SE` of
/// the candidate's cost estimate).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Tolerance {
    #[default]
    Auto,
    Value(f64),
}

impl<'de> Deserialize<'de> for Tolerance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) if v >= 0.0 => Ok(Tolerance::Value(v)),
            Repr::Num(v) => Err(de::Error::custom(format!("tolerance must be non-negative, got {v}"))),
            Repr::Text(s) => match s.to_ascii_lowercase().as_str() {
                "inf" | "infinity" => Ok(Tolerance::Value(f64::INFINITY)),
                "auto" => Ok(Tolerance::Auto),
                other => Err(de::Error::custom(format!(
                    "tolerance must be a number, \"inf\" or \"auto\", got \"{other}\""
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceBlock {
    #[serde(default)]
    pub tol: Tolerance,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SufficientBlock {
    #[serde(default)]
    pub tol: Tolerance,
    #[serde(default = "default_concavity_tol")]
    pub concavity_tol: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_concavity_tol() -> f64 {
    1e-6
}

fn default_samples() -> usize {
    200
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareBlock {
    #[serde(default = "default_perturbations")]
    pub perturbations: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_perturbations() -> usize {
    20
}

fn default_amplitude() -> f64 {
    0.5
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksBlock {
    #[serde(default)]
    pub variational: Option<ToleranceBlock>,
    #[serde(default)]
    pub singular: Option<ToleranceBlock>,
    #[serde(default)]
    pub sufficient: Option<SufficientBlock>,
    #[serde(default)]
    pub compare: Option<CompareBlock>,
    /// Violation cap; defaults to `1/√N`.
    #[serde(default)]
    pub cap: Option<f64>,
    /// Number of points of the control grid used by the variational check;
    /// defaults to the control set's own grid.
    #[serde(default)]
    pub control_points: Option<usize>,
}

impl ChecksBlock {
    pub fn is_empty(&self) -> bool {
        self.variational.is_none()
            && self.singular.is_none()
            && self.sufficient.is_none()
            && self.compare.is_none()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    #[serde(rename = "M")]
    pub steps: usize,
    pub control_values: Vec<f64>,
    #[serde(default)]
    pub atoms: Vec<AtomMenu>,
    pub particles: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateBlock {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub dir: Option<String>,
    /// Particles written to the per-particle CSV files (default 100).
    #[serde(default)]
    pub particle_limit: Option<usize>,
}

/// 1-based line and column of byte `offset` in `text`.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn schema_error(err: serde_json::Error) -> CliError {
    CliError::Config(format!("schema error: {err}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig<'_> = serde_json::from_str(text).map_err(schema_error)?;
        let params_text = raw.params.get();
        let offset = params_text.as_ptr() as usize - text.as_ptr() as usize;
        let locate = |err: serde_json::Error| {
            let (line0, col0) = position(text, offset);
            let line = line0 + err.line().saturating_sub(1);
            let col = if err.line() <= 1 { col0 + err.column().saturating_sub(1) } else { err.column() };
            // serde_json appends its own relative position; strip it
            let msg = err.to_string();
            let msg = msg.rsplit_once(" at line ").map_or(msg.as_str(), |(m, _)| m).to_string();
            CliError::Config(format!("schema error in params: {msg} at line {line} column {col}"))
        };
        let model = match raw.model {
            ModelKind::Interbank => ModelParams::Interbank(serde_json::from_str(params_text).map_err(locate)?),
            ModelKind::Affine => ModelParams::Affine(serde_json::from_str(params_text).map_err(locate)?),
        };
        let cfg = ExperimentConfig {
            model,
            generator: raw.generator,
            grid: raw.grid,
            particles: raw.particles,
            seed: raw.seed,
            control: raw.control,
            adjoint: raw.adjoint,
            checks: raw.checks,
            oracle: raw.oracle,
            validate: raw.validate,
            output: raw.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.generator.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return bad(format!("grid.T must be positive, got {}", self.grid.horizon));
        }
        if self.grid.steps == 0 {
            return bad("grid.M must be at least 1".into());
        }
        if self.particles == 0 {
            return bad("particles must be at least 1".into());
        }
        if let Some(cap) = self.checks.cap {
            if !(0.0..=1.0).contains(&cap) {
                return bad(format!("checks.cap must lie in [0, 1], got {cap}"));
            }
        }
        if let Some(s) = &self.checks.sufficient {
            if !(s.concavity_tol >= 0.0) {
                return bad("checks.sufficient.concavity_tol must be non-negative".into());
            }
        }
        if !(self.adjoint.tol > 0.0) || !(self.adjoint.second_order_tol > 0.0) {
            return bad("adjoint tolerances must be positive".into());
        }
        if let RegularBlock::OpenLoop { values } = &self.control.regular {
            if values.len() != self.grid.steps {
                return bad(format!(
                    "control.regular.values has {} entries, grid.M is {}",
                    values.len(),
                    self.grid.steps
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "model": "interbank",
  "params": {
    "a": [1.0], "b": [1.0], "c": [1.0],
    "sigma": 0.3, "rho": 0.5, "epsilon": 1.0, "beta": 2.0,
    "kappa": 1.0, "x0": 1.0
  },
  "generator": {"D": 1, "rates": [[0.0]]},
  "grid": {"T": 1.0, "M": 10},
  "particles": 100,
  "seed": 1
}"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert!(matches!(cfg.model, ModelParams::Interbank(_)));
        assert!(cfg.checks.is_empty());
    }

    #[test]
    fn missing_generator_is_named() {
        let text = MINIMAL.replace(r#""generator": {"D": 1, "rates": [[0.0]]},"#, "");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("generator"), "{err}");
    }

    #[test]
    fn params_error_has_absolute_line() {
        let text = MINIMAL.replace(r#""sigma": 0.3"#, r#""sigma": "x""#);
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn tolerance_forms() {
        let t: Tolerance = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(t, Tolerance::Value(f64::INFINITY));
        let t: Tolerance = serde_json::from_str("0.5").unwrap();
        assert_eq!(t, Tolerance::Value(0.5));
        assert!(serde_json::from_str::<Tolerance>("-1").is_err());
    }
}
