//! Turning a parsed configuration into core objects.

use std::sync::Arc;

use smp_core::adjoint::{
    solve_adjoint_interbank_explicit, solve_adjoint_lsmc, solve_volterra_mean, AdjointSample,
    LsmcOptions, RiccatiSolution, VolterraOptions, VolterraSolution,
};
use smp_core::control::{
    AdjointSource, ControlPair, FeedbackLaw, InterbankRate, OffsetLaw, OpenLoop, RegularControl,
};
use smp_core::forward_sim::{simulate, simulate_fixed_point, ParticleEnsemble};
use smp_core::model::{interbank_model, AffineModel, ControlModel, InterbankParams};
use smp_core::oracle::riccati_oracle;
use smp_core::{GeneratorMatrix, TimeGrid};

use crate::config::{ExperimentConfig, ModelParams, RegularBlock, SolverChoice};
use crate::error::CliError;

pub struct Setup {
    pub model: Arc<dyn ControlModel>,
    pub interbank: Option<InterbankParams>,
    pub generator: GeneratorMatrix,
    pub grid: TimeGrid,
}

pub fn build(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    build_on(cfg, cfg.grid.horizon, cfg.grid.steps)
}

/// Same model on a grid with `steps` steps over `horizon`.
pub fn build_on(cfg: &ExperimentConfig, horizon: f64, steps: usize) -> Result<Setup, CliError> {
    let grid = TimeGrid::new(horizon, steps)?;
    let generator = cfg.generator.clone();
    let (model, interbank): (Arc<dyn ControlModel>, _) = match &cfg.model {
        ModelParams::Interbank(p) => {
            let mut params = InterbankParams::single_regime(
                0.0, 0.0, 0.0, p.sigma, p.rho, p.epsilon, p.beta, 0.0, p.x0, horizon,
            );
            params.a = p.a.clone();
            params.b = p.b.clone();
            params.c = p.c.clone();
            params.kappa = p.kappa.clone();
            params.generator = generator.clone();
            params.initial_regime = p.initial_regime;
            if let Some(set) = &p.control_set {
                params.control_set = set.clone();
            }
            let model = interbank_model(params.clone())?;
            (Arc::new(model), Some(params))
        }
        ModelParams::Affine(a) => {
            let model = AffineModel {
                regimes: a.regimes.clone(),
                kappa: a.kappa.clone(),
                mean_field: a.mean_field,
                x0: a.x0,
                horizon,
                control_set: a.control_set.clone(),
                initial_regime: a.initial_regime,
            };
            model.validate()?;
            (Arc::new(model), None)
        }
    };
    smp_core::model::check_dimensions(model.as_ref(), &generator)?;
    Ok(Setup {
        model,
        interbank,
        generator,
        grid,
    })
}

fn need_interbank<'a>(setup: &'a Setup, what: &str) -> Result<&'a InterbankParams, CliError> {
    setup
        .interbank
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("control type \"{what}\" needs the interbank model")))
}

fn with_offset(law: Arc<dyn FeedbackLaw>, offset: f64, steps: usize) -> Arc<dyn FeedbackLaw> {
    if offset == 0.0 {
        law
    } else {
        Arc::new(OffsetLaw::uniform(law, offset, steps))
    }
}

/// Control pair described by the configuration on `setup.grid`; regular
/// values are snapped to `snap_to` when given.
pub fn control(cfg: &ExperimentConfig, setup: &Setup, snap_to: Option<&[f64]>) -> Result<ControlPair, CliError> {
    let steps = setup.grid.steps();
    let snap = |v: f64| snap_to.map_or(v, |s| smp_core::model::snap(s, v));
    let regular = match &cfg.control.regular {
        RegularBlock::Constant { value } => RegularControl::constant(snap(*value)),
        RegularBlock::OpenLoop { values } => {
            if values.len() != steps {
                return Err(CliError::Config(format!(
                    "open-loop table has {} entries, grid has {steps} steps",
                    values.len()
                )));
            }
            RegularControl::OpenLoop(OpenLoop::Common(values.iter().map(|v| snap(*v)).collect()))
        }
        RegularBlock::Riccati { offset } => {
            let params = need_interbank(setup, "riccati")?;
            let mut law = riccati_oracle(params, &setup.grid)?.feedback;
            if offset == &0.0 {
                law.snap_to = snap_to.map(|s| s.to_vec());
                RegularControl::Feedback(Arc::new(law))
            } else {
                let inner = with_offset(Arc::new(law), *offset, steps);
                match snap_to {
                    None => RegularControl::Feedback(inner),
                    Some(_) => {
                        return Err(CliError::Config(
                            "an offset Riccati control cannot be snapped to the oracle grid".into(),
                        ))
                    }
                }
            }
        }
        RegularBlock::Mp { offset, .. } => {
            let params = need_interbank(setup, "mp")?;
            let law = InterbankRate {
                gain: params.b.clone(),
                horizon: params.horizon,
                rho: params.rho,
                source: AdjointSource::Solved,
                snap_to: snap_to.map(|s| s.to_vec()),
            };
            RegularControl::Feedback(with_offset(Arc::new(law), *offset, steps))
        }
    };
    Ok(ControlPair::new(regular, cfg.control.singular.to_control()))
}

/// Adjoint solution plus solver-specific by-products.
pub struct AdjointOutcome {
    pub sample: AdjointSample,
    pub solver: SolverChoice,
    pub riccati: Option<RiccatiSolution>,
    pub volterra: Option<VolterraSolution>,
}

/// Resolve `auto`: the closed form only applies under the Riccati feedback
/// itself; otherwise the Volterra solver handles the inter-bank model and the
/// regression solver everything else.
pub fn resolve_solver(cfg: &ExperimentConfig, setup: &Setup, regular: &RegularBlock) -> SolverChoice {
    match cfg.adjoint.solver {
        SolverChoice::Auto => match &setup.interbank {
            Some(p) if p.regime_independent() && matches!(regular, RegularBlock::Riccati { offset } if *offset == 0.0) => {
                SolverChoice::Explicit
            }
            Some(_) => SolverChoice::Volterra,
            None => SolverChoice::Lsmc,
        },
        other => other,
    }
}

pub fn solve_adjoint(
    cfg: &ExperimentConfig,
    setup: &Setup,
    solver: SolverChoice,
    ensemble: &ParticleEnsemble,
) -> Result<AdjointOutcome, CliError> {
    let interbank = || {
        setup.interbank.as_ref().ok_or_else(|| {
            CliError::Config(format!("adjoint solver {solver:?} needs the interbank model").to_lowercase())
        })
    };
    Ok(match solver {
        SolverChoice::Explicit => {
            let (sample, ric) = solve_adjoint_interbank_explicit(interbank()?, ensemble)?;
            AdjointOutcome {
                sample,
                solver,
                riccati: Some(ric),
                volterra: None,
            }
        }
        SolverChoice::Volterra => {
            let opts = VolterraOptions {
                max_iterations: cfg.adjoint.max_iterations,
                tol: cfg.adjoint.tol,
                basis_order: cfg.adjoint.basis_order,
            };
            let sol = solve_volterra_mean(interbank()?, ensemble, &opts)?;
            AdjointOutcome {
                sample: sol.adjoint.clone(),
                solver,
                riccati: None,
                volterra: Some(sol),
            }
        }
        SolverChoice::Lsmc | SolverChoice::Auto => {
            let opts = LsmcOptions {
                basis_order: cfg.adjoint.basis_order,
            };
            AdjointOutcome {
                sample: solve_adjoint_lsmc(setup.model.as_ref(), &setup.generator, ensemble, &opts)?,
                solver: SolverChoice::Lsmc,
                riccati: None,
                volterra: None,
            }
        }
    })
}

/// Simulate the configured control; feedback rules that read the adjoint are
/// iterated with the configured solver.
pub fn simulate_control(
    cfg: &ExperimentConfig,
    setup: &Setup,
    control: &ControlPair,
    particles: usize,
    seed: u64,
) -> Result<(ParticleEnsemble, Option<AdjointOutcome>), CliError> {
    let model = setup.model.as_ref();
    if let RegularBlock::Mp { sweeps, .. } = &cfg.control.regular {
        let solver = resolve_solver(cfg, setup, &cfg.control.regular);
        let mut last = None;
        let (ens, _) = simulate_fixed_point(
            model,
            &setup.generator,
            control,
            &setup.grid,
            particles,
            seed,
            *sweeps,
            |ens| {
                let out = solve_adjoint(cfg, setup, solver, ens).map_err(|e| match e {
                    CliError::Core(c) => c,
                    other => smp_core::SmpError::Precondition(other.to_string()),
                })?;
                let sample = out.sample.clone();
                last = Some(out);
                Ok(sample)
            },
        )?;
        return Ok((ens, last));
    }
    Ok((simulate(model, &setup.generator, control, &setup.grid, particles, seed)?, None))
}
