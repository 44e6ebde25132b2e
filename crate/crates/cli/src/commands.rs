//! Subcommand implementations. Each writes its files into the output
//! directory together with `config.json` (a verbatim copy of the input) and
//! `manifest.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use smp_core::adjoint::{solve_second_order, SecondOrderField};
use smp_core::forward_sim::{estimate_cost, simulate, ParticleEnsemble};
use smp_core::model::{validate_model, ControlModel};
use smp_core::mp_check::{
    check_singular_conditions, check_sufficient, check_variational_inequality, compare_costs,
    default_cap, random_perturbations, CheckReport, SufficientOptions,
};
use smp_core::oracle::{brute_force_open_loop, bsde_residual, CoarseInstance};
use smp_core::{stats, SmpError};

use crate::config::{ExperimentConfig, RegularBlock, SolverChoice, Tolerance};
use crate::error::CliError;
use crate::setup::{self, AdjointOutcome, Setup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Adjoint,
    Check,
    Oracle,
    ValidateModel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Adjoint => "adjoint",
            Command::Check => "check",
            Command::Oracle => "oracle",
            Command::ValidateModel => "validate-model",
        }
    }
}

/// Result of a successful run: `passed` selects exit code 0 or 1.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub summary: String,
}

const DEFAULT_PARTICLE_LIMIT: usize = 100;

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self { dir })
    }

    fn write<F>(&self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let io = |source| CliError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(&path).map_err(io)?;
        let mut w = BufWriter::new(file);
        f(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, |w| w.write_all(text.as_bytes()))
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Parse the configuration, run `command` and write its outputs.
pub fn run(command: Command, config_path: &Path, out: Option<&Path>) -> Result<Outcome, CliError> {
    let text = fs::read_to_string(config_path).map_err(|source| CliError::Io {
        path: config_path.display().to_string(),
        source,
    })?;
    let cfg = ExperimentConfig::parse(&text)?;
    let dir = match (out, &cfg.output.dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => {
            return Err(CliError::Config(
                "no output directory: pass --out or set output.dir".into(),
            ))
        }
    };
    let output = Output::create(dir)?;
    output.text("config.json", &text)?;
    output.json(
        "manifest.json",
        &json!({
            "tool": "smp",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command.name(),
            "config_file": "config.json",
            "config_sha256": config_hash(&text),
            "seed": cfg.seed,
        }),
    )?;
    match command {
        Command::Simulate => run_simulate(&cfg, &output),
        Command::Adjoint => run_adjoint(&cfg, &output),
        Command::Check => run_check(&cfg, &output),
        Command::Oracle => run_oracle(&cfg, &output),
        Command::ValidateModel => run_validate(&cfg, &output),
    }
}

fn limit(cfg: &ExperimentConfig) -> Option<usize> {
    Some(cfg.output.particle_limit.unwrap_or(DEFAULT_PARTICLE_LIMIT))
}

fn write_ensemble(cfg: &ExperimentConfig, output: &Output, ens: &ParticleEnsemble) -> Result<(), CliError> {
    output.write("particles.csv", |w| ens.write_particles_csv(w, limit(cfg)))?;
    output.write("summary.csv", |w| ens.write_summary_csv(w))?;
    output.write("jumps.csv", |w| ens.write_jumps_csv(w, limit(cfg)))
}

fn run_simulate(cfg: &ExperimentConfig, output: &Output) -> Result<Outcome, CliError> {
    let setup = setup::build(cfg)?;
    let control = setup::control(cfg, &setup, None)?;
    let (ens, _) = setup::simulate_control(cfg, &setup, &control, cfg.particles, cfg.seed)?;
    write_ensemble(cfg, output, &ens)?;
    let cost = estimate_cost(setup.model.as_ref(), &ens);
    output.json("cost.json", &json!({ "J": cost.mean, "SE": cost.std_error }))?;
    Ok(Outcome {
        passed: true,
        summary: format!("J = {} (SE {})", cost.mean, cost.std_error),
    })
}

/// Simulation followed by the adjoint solve selected in the configuration.
fn candidate(cfg: &ExperimentConfig, setup: &Setup) -> Result<(ParticleEnsemble, AdjointOutcome), CliError> {
    let control = setup::control(cfg, setup, None)?;
    let (ens, solved) = setup::simulate_control(cfg, setup, &control, cfg.particles, cfg.seed)?;
    let adjoint = match solved {
        Some(a) => a,
        None => {
            let solver = setup::resolve_solver(cfg, setup, &cfg.control.regular);
            setup::solve_adjoint(cfg, setup, solver, &ens)?
        }
    };
    Ok((ens, adjoint))
}

fn solver_name(s: SolverChoice) -> &'static str {
    match s {
        SolverChoice::Auto => "auto",
        SolverChoice::Explicit => "explicit",
        SolverChoice::Lsmc => "lsmc",
        SolverChoice::Volterra => "volterra",
    }
}

/// Largest `|mean_n p_k| / SE_k` over grid points with non-zero spread.
fn mean_p_ratio(adj: &smp_core::adjoint::AdjointSample) -> f64 {
    (0..=adj.steps())
        .filter_map(|k| {
            let p = adj.p_at(k);
            let se = stats::std_error(p);
            (se > 0.0).then(|| stats::mean(p).abs() / se)
        })
        .fold(0.0, f64::max)
}

fn run_adjoint(cfg: &ExperimentConfig, output: &Output) -> Result<Outcome, CliError> {
    let setup = setup::build(cfg)?;
    let (ens, adj) = candidate(cfg, &setup)?;
    let model = setup.model.as_ref();
    output.write("adjoint.csv", |w| adj.sample.write_csv(w, limit(cfg)))?;
    let residual = bsde_residual(model, &setup.generator, &ens, &adj.sample)?;
    output.json("residual.json", &residual)?;
    if let Some(r) = &adj.riccati {
        output.write("eta.csv", |w| r.write_csv(w))?;
    }
    if let Some(v) = &adj.volterra {
        output.json(
            "volterra.json",
            &json!({
                "m": v.m,
                "residual": v.residual,
                "iterations": v.iterations,
                "consistency_gap": v.consistency_gap,
            }),
        )?;
    }
    let second = match solve_second_order(model, &setup.generator, &ens, &adj.sample, cfg.adjoint.second_order_tol) {
        Ok(field) => {
            output.write("second_order.csv", |w| field.write_csv(w))?;
            json!("second_order.csv")
        }
        Err(SmpError::UnsupportedClass(msg)) => json!(format!("unsupported: {msg}")),
        Err(e) => return Err(e.into()),
    };
    let mean_p: Vec<f64> = (0..=adj.sample.steps()).map(|k| stats::mean(adj.sample.p_at(k))).collect();
    output.json(
        "adjoint.json",
        &json!({
            "solver": solver_name(adj.solver),
            "residual_aggregate": residual.aggregate,
            "mean_p": mean_p,
            "max_mean_p_over_se": mean_p_ratio(&adj.sample),
            "second_order": second,
        }),
    )?;
    Ok(Outcome {
        passed: true,
        summary: format!(
            "adjoint solved with {} (BSDE residual {:.3e})",
            solver_name(adj.solver),
            residual.aggregate
        ),
    })
}

fn resolve_tol(tol: Tolerance, h: f64, se: f64) -> f64 {
    match tol {
        Tolerance::Value(v) => v,
        Tolerance::Auto => 5.0 * h + 3.0 * se,
    }
}

fn control_grid(cfg: &ExperimentConfig, model: &dyn ControlModel) -> Vec<f64> {
    let set = model.control_set();
    match cfg.checks.control_points {
        Some(points) if points >= 2 && set.is_interval() => {
            let (lo, hi) = set.bounds();
            (0..points)
                .map(|i| if i + 1 == points { hi } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 })
                .collect()
        }
        _ => set.grid(),
    }
}

fn variational(
    cfg: &ExperimentConfig,
    setup: &Setup,
    ens: &ParticleEnsemble,
    adj: &smp_core::adjoint::AdjointSample,
    grid_u: &[f64],
    tol: f64,
    cap: f64,
) -> Result<CheckReport, CliError> {
    let model = setup.model.as_ref();
    let second: SecondOrderField =
        solve_second_order(model, &setup.generator, ens, adj, cfg.adjoint.second_order_tol)?;
    Ok(check_variational_inequality(model, &setup.generator, ens, adj, &second, grid_u, tol, cap)?)
}

fn run_check(cfg: &ExperimentConfig, output: &Output) -> Result<Outcome, CliError> {
    let setup = setup::build(cfg)?;
    let model = setup.model.as_ref();
    let (ens, adj) = candidate(cfg, &setup)?;
    let cost = estimate_cost(model, &ens);
    let h = setup.grid.dt();
    let cap = cfg.checks.cap.unwrap_or_else(|| default_cap(cfg.particles));
    let mut checks = cfg.checks.clone();
    if checks.is_empty() {
        checks.variational = Some(Default::default());
        checks.singular = Some(Default::default());
    }
    let mut report = CheckReport::new(Vec::new());
    if let Some(v) = &checks.variational {
        let tol = resolve_tol(v.tol, h, cost.std_error);
        let grid_u = control_grid(cfg, model);
        report = report.merge(variational(cfg, &setup, &ens, &adj.sample, &grid_u, tol, cap)?);
    }
    // the sufficient check already contains both singular conditions
    if let (Some(s), None) = (&checks.singular, &checks.sufficient) {
        let tol = resolve_tol(s.tol, h, cost.std_error);
        report = report.merge(check_singular_conditions(model, &ens, &adj.sample, tol, cap)?);
    }
    if let Some(s) = &checks.sufficient {
        let opts = SufficientOptions {
            tol: resolve_tol(s.tol, h, cost.std_error),
            concavity_tol: s.concavity_tol,
            cap,
            samples: s.samples,
            seed: cfg.seed,
        };
        report = report.merge(check_sufficient(model, &setup.generator, &ens, &adj.sample, &opts)?);
    }
    let mut flagged = false;
    if let Some(c) = &checks.compare {
        if matches!(cfg.control.regular, RegularBlock::Mp { .. }) {
            return Err(CliError::Config(
                "checks.compare needs a control that does not read the adjoint".into(),
            ));
        }
        let base = setup::control(cfg, &setup, None)?;
        let perturbations = random_perturbations(&base, c.perturbations, c.amplitude, setup.grid.steps(), c.seed);
        let cmp = compare_costs(
            model,
            &setup.generator,
            &setup.grid,
            cfg.particles,
            cfg.seed,
            &base,
            &perturbations,
        )?;
        flagged = cmp.any_flag;
        output.json("compare.json", &cmp)?;
    }
    output.json("report.json", &report)?;
    let mut table = report.table();
    if checks.compare.is_some() {
        table.push_str(&format!(
            "cost comparison: {}\n",
            if flagged { "FLAG (a perturbation beats the candidate)" } else { "no flag" }
        ));
    }
    output.text("report.txt", &table)?;
    Ok(Outcome {
        passed: report.pass && !flagged,
        summary: table,
    })
}

fn run_oracle(cfg: &ExperimentConfig, output: &Output) -> Result<Outcome, CliError> {
    let block = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| CliError::Config("missing field `oracle`".into()))?;
    let setup = setup::build_on(cfg, cfg.grid.horizon, block.steps)?;
    let model = setup.model.as_ref();
    let instance = CoarseInstance {
        grid: setup.grid,
        control_values: block.control_values.clone(),
        atoms: block.atoms.clone(),
        particles: block.particles,
        seed: block.seed,
    };
    let bf = brute_force_open_loop(model, &setup.generator, &instance)?;
    output.write("table.csv", |w| bf.write_csv(w))?;

    // MP candidate on the coarse grid, snapped to the enumerated values and
    // evaluated on the same noise
    if matches!(cfg.control.regular, RegularBlock::Mp { .. }) {
        return Err(CliError::Config(
            "the oracle comparison needs a control that does not read the adjoint".into(),
        ));
    }
    let candidate = setup::control(cfg, &setup, Some(&block.control_values))?;
    let cand_ens = simulate(model, &setup.generator, &candidate, &setup.grid, block.particles, block.seed)?;
    let cand_cost = estimate_cost(model, &cand_ens);
    let diff: Vec<f64> = cand_cost
        .per_particle
        .iter()
        .zip(&bf.best_cost.per_particle)
        .map(|(a, b)| a - b)
        .collect();
    let difference = stats::mean(&diff);
    let difference_se = stats::std_error(&diff);
    let within = difference >= -2.0 * difference_se;

    // variational inequality at the enumerated optimum
    let best_ens = simulate(model, &setup.generator, &bf.best, &setup.grid, block.particles, block.seed)?;
    let solver = setup::resolve_solver(cfg, &setup, &RegularBlock::OpenLoop { values: Vec::new() });
    let adj = setup::solve_adjoint(cfg, &setup, solver, &best_ens)?;
    let tol = 5.0 * setup.grid.dt() + 3.0 * bf.best_cost.std_error;
    let cap = cfg.checks.cap.unwrap_or_else(|| default_cap(block.particles));
    let vi = variational(cfg, &setup, &best_ens, &adj.sample, &block.control_values, tol, cap)?;

    let best = bf.best_row();
    let verdict = format!(
        "MP candidate {} 2·SE of the brute-force optimum (J_mp = {}, J_bf = {}, paired difference {} ± {})",
        if within { "within" } else { "NOT within" },
        cand_cost.mean,
        best.j,
        difference,
        difference_se
    );
    output.text("verdict.txt", &format!("{verdict}\n"))?;
    output.json(
        "oracle.json",
        &json!({
            "cardinality": bf.table.len(),
            "best": best,
            "candidate": { "J": cand_cost.mean, "SE": cand_cost.std_error },
            "difference": difference,
            "difference_se": difference_se,
            "within_2se": within,
            "variational_at_optimum": vi,
        }),
    )?;
    Ok(Outcome {
        passed: within && vi.pass,
        summary: format!(
            "{verdict}\nvariational inequality at the optimum: {}",
            if vi.pass { "pass" } else { "FAIL" }
        ),
    })
}

fn run_validate(cfg: &ExperimentConfig, output: &Output) -> Result<Outcome, CliError> {
    let setup = setup::build(cfg)?;
    let report = validate_model(setup.model.as_ref(), cfg.validate.samples, cfg.validate.seed);
    output.json("validation.json", &report)?;
    let mut summary = String::new();
    for e in &report.entries {
        summary.push_str(&format!(
            "{:<14} {:>12.3e} {}\n",
            e.name,
            e.max_rel_error,
            if e.max_rel_error <= report.tolerance { "ok" } else { "MISMATCH" }
        ));
    }
    let passed = report.passed;
    if let Err(e) = report.into_result() {
        summary.push_str(&format!("{e}\n"));
    }
    Ok(Outcome { passed, summary })
}
