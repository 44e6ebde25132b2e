//! Interacting-particle Euler scheme for the controlled mean-field state
//! equation and Monte Carlo estimation of the criterion.
//!
//! Per-step arrays are stored step-major (`index = k * N + n`), so the
//! particle loop of one step touches contiguous memory.

use std::io::{self, Write};

use rand_distr::{Distribution, StandardNormal};

use crate::adjoint::AdjointSample;
use crate::control::{ControlPair, FeedbackInput, OpenLoop, RegularControl};
use crate::error::{Result, SmpError};
use crate::exec;
use crate::grid::TimeGrid;
use crate::model::{check_dimensions, ControlModel, Point};
use crate::regime_chain::{
    compensated_increments, sample_regime_path, GeneratorMatrix, Regime, RegimePath,
};
use crate::rng::{stream, Channel};
use crate::stats;

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    particles: usize,
    dim: usize,
    seed: u64,
    first_particle: u64,
    states: Vec<f64>,
    mean_field: Vec<f64>,
    paths: Vec<RegimePath>,
    brownian: Vec<f64>,
    jump_martingale: Vec<f64>,
    controls: Vec<f64>,
    singular: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    /// Chain dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn first_particle(&self) -> u64 {
        self.first_particle
    }

    pub fn x(&self, n: usize, k: usize) -> f64 {
        self.states[k * self.particles + n]
    }

    /// States of all particles at grid point `k`.
    pub fn states_at(&self, k: usize) -> &[f64] {
        &self.states[k * self.particles..(k + 1) * self.particles]
    }

    /// Empirical `μ_k = mean_n φ(X_k^n)`.
    pub fn mean_field(&self, k: usize) -> f64 {
        self.mean_field[k]
    }

    pub fn mean_field_curve(&self) -> &[f64] {
        &self.mean_field
    }

    pub fn regime(&self, n: usize, k: usize) -> Regime {
        self.paths[n].state(k)
    }

    pub fn path(&self, n: usize) -> &RegimePath {
        &self.paths[n]
    }

    pub fn brownian(&self, n: usize, k: usize) -> f64 {
        self.brownian[k * self.particles + n]
    }

    /// Compensated jump increment `ΔΦ~_j` of particle `n` over step `k`.
    pub fn jump_martingale(&self, n: usize, k: usize, j: usize) -> f64 {
        self.jump_martingale[(k * self.particles + n) * self.dim + j]
    }

    /// Regular control applied on step `k`.
    pub fn control(&self, n: usize, k: usize) -> f64 {
        self.controls[k * self.particles + n]
    }

    pub fn controls_at(&self, k: usize) -> &[f64] {
        &self.controls[k * self.particles..(k + 1) * self.particles]
    }

    /// Singular increment of step `k` (mass located at `t_{k+1}`).
    pub fn singular(&self, n: usize, k: usize) -> f64 {
        self.singular[k * self.particles + n]
    }

    pub fn singular_mass(&self) -> f64 {
        self.singular.iter().sum()
    }

    /// Recompute `μ_k` from the stored states.
    pub fn recompute_mean_field(&self, model: &dyn ControlModel, k: usize) -> f64 {
        mean_of(self.states_at(k), |x| model.mean_field(x).0)
    }

    pub fn write_particles_csv<W: Write>(&self, mut w: W, limit: Option<usize>) -> io::Result<()> {
        writeln!(w, "particle,step,t,X,regime")?;
        let count = limit.unwrap_or(self.particles).min(self.particles);
        for n in 0..count {
            for k in 0..=self.steps() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    self.first_particle + n as u64,
                    k,
                    self.grid.time(k),
                    self.x(n, k),
                    self.regime(n, k).label()
                )?;
            }
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,mu,mean_x,var_x")?;
        for k in 0..=self.steps() {
            let xs = self.states_at(k);
            writeln!(
                w,
                "{},{},{},{}",
                self.grid.time(k),
                self.mean_field[k],
                stats::mean(xs),
                stats::variance(xs)
            )?;
        }
        Ok(())
    }

    pub fn write_jumps_csv<W: Write>(&self, mut w: W, limit: Option<usize>) -> io::Result<()> {
        writeln!(w, "particle,time,from,to")?;
        let count = limit.unwrap_or(self.particles).min(self.particles);
        for n in 0..count {
            for j in self.paths[n].jumps() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    self.first_particle + n as u64,
                    j.time,
                    j.from.label(),
                    j.to.label()
                )?;
            }
        }
        Ok(())
    }
}

fn mean_of<F: Fn(f64) -> f64 + Sync + Send>(xs: &[f64], f: F) -> f64 {
    exec::chunked_sum(xs.len(), |i| f(xs[i])) / xs.len() as f64
}

/// Options beyond the common `(particles, seed)` pair.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions<'a> {
    pub particles: usize,
    pub seed: u64,
    /// Stream index of the first particle; particle `n` draws from stream
    /// `first_particle + n`.
    pub first_particle: u64,
    /// Adjoint values for feedback rules that read `p`.
    pub adjoint: Option<&'a AdjointSample>,
}

impl SimOptions<'_> {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            seed,
            first_particle: 0,
            adjoint: None,
        }
    }
}

pub fn simulate(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    control: &ControlPair,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
) -> Result<ParticleEnsemble> {
    simulate_with(model, gen, control, grid, &SimOptions::new(particles, seed))
}

pub fn simulate_with(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    control: &ControlPair,
    grid: &TimeGrid,
    opts: &SimOptions<'_>,
) -> Result<ParticleEnsemble> {
    let n_part = opts.particles;
    let m = grid.steps();
    let d = gen.dim();
    if n_part == 0 {
        return Err(SmpError::InvalidInput("need at least one particle".into()));
    }
    gen.validate()?;
    check_dimensions(model, gen)?;
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon().max(1.0) {
        return Err(SmpError::Shape(format!(
            "grid horizon {} differs from model horizon {}",
            grid.horizon(),
            model.horizon()
        )));
    }
    match &control.regular {
        RegularControl::OpenLoop(OpenLoop::Common(v)) if v.len() != m => {
            return Err(SmpError::Shape(format!(
                "open-loop table has {} steps, grid has {m}",
                v.len()
            )))
        }
        RegularControl::OpenLoop(OpenLoop::PerParticle {
            particles, steps, values,
        }) if *particles != n_part || *steps != m || values.len() != n_part * m => {
            return Err(SmpError::Shape(format!(
                "open-loop table is {particles}x{steps}, need {n_part}x{m}"
            )))
        }
        _ => {}
    }
    if let Some(adj) = opts.adjoint {
        if adj.particles() != n_part || adj.steps() != m {
            return Err(SmpError::Shape(
                "adjoint sample does not match the requested ensemble".into(),
            ));
        }
    } else if control.regular.needs_adjoint() {
        return Err(SmpError::Precondition(
            "feedback rule reads the adjoint but none was supplied".into(),
        ));
    }
    let singular = control.singular.increments(grid, n_part)?;

    // Noise: each particle owns its chain and Brownian streams.
    let sqrt_h = grid.dt().sqrt();
    let initial = model.initial_regime();
    let noise = exec::map_range(n_part, |n| -> Result<(RegimePath, Vec<f64>, Vec<f64>)> {
        let id = opts.first_particle + n as u64;
        let mut chain_rng = stream(opts.seed, id, Channel::Chain);
        let path = sample_regime_path(gen, initial, grid, &mut chain_rng)?;
        let mut bm_rng = stream(opts.seed, id, Channel::Brownian);
        let db: Vec<f64> = (0..m)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut bm_rng);
                z * sqrt_h
            })
            .collect();
        let inc = compensated_increments(&path, gen);
        let mut jm = vec![0.0; m * d];
        for k in 0..m {
            for j in 0..d {
                jm[k * d + j] = inc.martingale(k, j);
            }
        }
        Ok((path, db, jm))
    });
    let mut paths = Vec::with_capacity(n_part);
    let mut brownian = vec![0.0; n_part * m];
    let mut jump_martingale = vec![0.0; n_part * m * d];
    for (n, item) in noise.into_iter().enumerate() {
        let (path, db, jm) = item?;
        for k in 0..m {
            brownian[k * n_part + n] = db[k];
            for j in 0..d {
                jump_martingale[(k * n_part + n) * d + j] = jm[k * d + j];
            }
        }
        paths.push(path);
    }

    let mut states = vec![0.0; n_part * (m + 1)];
    states[..n_part].fill(model.x0());
    let mut controls = vec![0.0; n_part * m];
    let mut mean_field = vec![0.0; m + 1];
    let h = grid.dt();
    let set = model.control_set();

    for k in 0..m {
        let (done, rest) = states.split_at_mut((k + 1) * n_part);
        let current = &done[k * n_part..];
        let next = &mut rest[..n_part];
        let mu = mean_of(current, |x| model.mean_field(x).0);
        mean_field[k] = mu;
        let t = grid.time(k);
        let t_next = grid.time(k + 1);

        let step_controls = &mut controls[k * n_part..(k + 1) * n_part];
        exec::for_each_mut(step_controls, |n, u| {
            let raw = match &control.regular {
                RegularControl::OpenLoop(OpenLoop::Common(v)) => v[k],
                RegularControl::OpenLoop(OpenLoop::PerParticle { values, .. }) => {
                    values[n * m + k]
                }
                RegularControl::Feedback(law) => law.control(&FeedbackInput {
                    t,
                    step: k,
                    x: current[n],
                    mean_field: mu,
                    regime: paths[n].state(k),
                    adjoint: opts.adjoint.map(|a| a.p(n, k)),
                }),
            };
            *u = set.project(raw);
        });
        let step_controls = &controls[k * n_part..(k + 1) * n_part];

        exec::for_each_mut(next, |n, x_next| {
            let regime = paths[n].state(k);
            let x = current[n];
            let pt = Point::new(t, x, mu, step_controls[n], regime);
            let mut dx = model.drift(&pt).value * h
                + model.diffusion(&pt).value * brownian[k * n_part + n];
            for j in 0..d {
                let dm = jump_martingale[(k * n_part + n) * d + j];
                if dm != 0.0 {
                    dx += model.jump(&pt, Regime::from_index(j)).value * dm;
                }
            }
            let dxi = singular[n * m + k];
            if dxi != 0.0 {
                // mass of step k sits at t_{k+1}, in the regime held just before it
                dx += model.singular_coefficient(t_next, paths[n].state(k + 1)) * dxi;
            }
            *x_next = x + dx;
        });
        if let Some(n) = next.iter().position(|x| !x.is_finite()) {
            return Err(SmpError::NonFiniteState {
                particle: opts.first_particle as usize + n,
                step: k + 1,
            });
        }
    }
    mean_field[m] = mean_of(&states[m * n_part..], |x| model.mean_field(x).0);

    let mut singular_step_major = vec![0.0; n_part * m];
    for n in 0..n_part {
        for k in 0..m {
            singular_step_major[k * n_part + n] = singular[n * m + k];
        }
    }

    Ok(ParticleEnsemble {
        grid: *grid,
        particles: n_part,
        dim: d,
        seed: opts.seed,
        first_particle: opts.first_particle,
        states,
        mean_field,
        paths,
        brownian,
        jump_martingale,
        controls,
        singular: singular_step_major,
    })
}

/// Simulate a control whose feedback reads the adjoint by alternating
/// simulation and adjoint solves on common noise. The first pass runs with
/// `p` unavailable; `sweeps` further passes reuse the latest adjoint.
#[allow(clippy::too_many_arguments)]
pub fn simulate_fixed_point<F>(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    control: &ControlPair,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
    sweeps: usize,
    mut solve: F,
) -> Result<(ParticleEnsemble, AdjointSample)>
where
    F: FnMut(&ParticleEnsemble) -> Result<AdjointSample>,
{
    if !control.regular.needs_adjoint() {
        let ens = simulate(model, gen, control, grid, particles, seed)?;
        let adj = solve(&ens)?;
        return Ok((ens, adj));
    }
    let zero = AdjointSample::zeros(particles, grid.steps(), gen.dim());
    let run = |adjoint: &AdjointSample| {
        let opts = SimOptions {
            adjoint: Some(adjoint),
            ..SimOptions::new(particles, seed)
        };
        simulate_with(model, gen, control, grid, &opts)
    };
    let mut ens = run(&zero)?;
    let mut adj = solve(&ens)?;
    for _ in 0..sweeps {
        ens = run(&adj)?;
        adj = solve(&ens)?;
    }
    Ok((ens, adj))
}

#[derive(Debug, Clone)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Realized criterion per particle.
    pub per_particle: Vec<f64>,
}

/// Monte Carlo estimate of `J = E[ Σ f h + Σ κ Δξ + h(X_M, μ_M, α_M) ]`.
pub fn estimate_cost(model: &dyn ControlModel, ensemble: &ParticleEnsemble) -> CostEstimate {
    let grid = ensemble.grid;
    let m = grid.steps();
    let h = grid.dt();
    let per_particle = exec::map_range(ensemble.particles, |n| {
        let mut acc = 0.0;
        for k in 0..m {
            let pt = Point::new(
                grid.time(k),
                ensemble.x(n, k),
                ensemble.mean_field(k),
                ensemble.control(n, k),
                ensemble.regime(n, k),
            );
            acc += model.running_cost(&pt).value * h;
            let dxi = ensemble.singular(n, k);
            if dxi != 0.0 {
                acc += model.singular_cost(grid.time(k + 1)) * dxi;
            }
        }
        acc + model
            .terminal_cost(ensemble.x(n, m), ensemble.mean_field(m), ensemble.regime(n, m))
            .value
    });
    CostEstimate {
        mean: stats::mean(&per_particle),
        std_error: stats::std_error(&per_particle),
        per_particle,
    }
}
