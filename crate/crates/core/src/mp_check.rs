//! Empirical checks of the necessary and sufficient conditions of the maximum
//! principle for a candidate control.
//!
//! Every almost-sure statement is tested as an empirical-fraction statement:
//! a condition passes when the weight of sample points whose violation exceeds
//! `tol` is at most `cap` times the total weight.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::{hamiltonian, AdjointSample, SecondOrderField};
use crate::control::{ControlPair, FeedbackLaw, OffsetLaw, OpenLoop, RegularControl};
use crate::error::{Result, SmpError};
use crate::exec;
use crate::forward_sim::{estimate_cost, simulate, ParticleEnsemble};
use crate::grid::TimeGrid;
use crate::model::{ControlModel, Point};
use crate::regime_chain::{GeneratorMatrix, Regime};
use crate::rng::{stream, Channel};
use crate::stats;

/// Number of worst offenders kept as evidence.
const EVIDENCE: usize = 5;

/// Finite-difference step of the sampled Hessians.
const HESSIAN_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct Offender {
    pub particle: usize,
    pub step: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub name: String,
    /// Largest violation over all sample points.
    pub max_violation: f64,
    /// Weight fraction of points whose violation exceeds `tolerance`.
    pub violating_fraction: f64,
    /// Smallest threshold exceeded by at most a `cap` fraction of the weight.
    pub robust_max: f64,
    pub tolerance: f64,
    pub cap: f64,
    pub samples: usize,
    pub pass: bool,
    pub evidence: Vec<Offender>,
}

impl ConditionReport {
    /// Summarize `values` (violations, larger is worse) with optional weights.
    fn from_values(
        name: &str,
        values: &[f64],
        weights: Option<&[f64]>,
        ids: &[(usize, usize)],
        tol: f64,
        cap: f64,
    ) -> Self {
        let ones;
        let w = match weights {
            Some(w) => w,
            None => {
                ones = vec![1.0; values.len()];
                &ones
            }
        };
        let total: f64 = w.iter().sum();
        let bad: f64 = values
            .iter()
            .zip(w)
            .filter(|(v, _)| **v > tol || v.is_nan())
            .fold(0.0, |acc, (_, w)| acc + w);
        let violating_fraction = if total > 0.0 { bad / total } else { 0.0 };
        let max_violation = values
            .iter()
            .zip(w)
            .filter(|(_, w)| **w > 0.0)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let robust_max = stats::capped_max(values, w, cap);
        let mut order: Vec<usize> = (0..values.len()).filter(|&i| w[i] > 0.0).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let evidence = order
            .into_iter()
            .take(EVIDENCE)
            .map(|i| Offender {
                particle: ids[i].0,
                step: ids[i].1,
                value: values[i],
            })
            .collect();
        let finite = values.iter().all(|v| !v.is_nan());
        Self {
            name: name.into(),
            max_violation,
            violating_fraction,
            robust_max,
            tolerance: tol,
            cap,
            samples: values.len(),
            pass: finite && robust_max <= tol,
            evidence,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub conditions: Vec<ConditionReport>,
    pub pass: bool,
}

impl CheckReport {
    pub fn new(conditions: Vec<ConditionReport>) -> Self {
        let pass = conditions.iter().all(|c| c.pass);
        Self { conditions, pass }
    }

    pub fn merge(mut self, other: CheckReport) -> Self {
        self.conditions.extend(other.conditions);
        self.pass = self.conditions.iter().all(|c| c.pass);
        self
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Fixed-width text table, one row per condition.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>13} {:>13} {:>10} {:>11} {:>8}",
            "condition", "status", "max", "robust max", "fraction", "tolerance", "cap"
        );
        for c in &self.conditions {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>13.5e} {:>13.5e} {:>10.6} {:>11.4e} {:>8.5}",
                c.name,
                if c.pass { "pass" } else { "FAIL" },
                c.max_violation,
                c.robust_max,
                c.violating_fraction,
                c.tolerance,
                c.cap
            );
        }
        let _ = writeln!(out, "overall: {}", if self.pass { "pass" } else { "FAIL" });
        out
    }
}

/// Default violation cap `1/√N`.
pub fn default_cap(particles: usize) -> f64 {
    1.0 / (particles.max(1) as f64).sqrt()
}

fn check_shapes(ensemble: &ParticleEnsemble, adjoint: &AdjointSample) -> Result<()> {
    if adjoint.shape_matches(ensemble) {
        Ok(())
    } else {
        Err(SmpError::InvalidInput(format!(
            "adjoint is {}x{} (D={}), ensemble is {}x{} (D={})",
            adjoint.particles(),
            adjoint.steps(),
            adjoint.dim(),
            ensemble.particles(),
            ensemble.steps(),
            ensemble.dim()
        )))
    }
}

fn point(ensemble: &ParticleEnsemble, n: usize, k: usize, u: f64) -> Point {
    Point::new(
        ensemble.grid().time(k),
        ensemble.x(n, k),
        ensemble.mean_field(k),
        u,
        ensemble.regime(n, k),
    )
}

/// Largest value over the control grid of
///
/// ```text
/// H(u) - H(u*) + ½ P (δσ)² + ½ Σ_j (P + S_j)(δγ^j)² ζ_ij
/// ```
///
/// at each `(particle, step)`, with `u*` the control recorded in the ensemble.
#[allow(clippy::too_many_arguments)]
pub fn check_variational_inequality(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    ensemble: &ParticleEnsemble,
    adjoint: &AdjointSample,
    second: &SecondOrderField,
    control_grid: &[f64],
    tol: f64,
    cap: f64,
) -> Result<CheckReport> {
    check_shapes(ensemble, adjoint)?;
    if second.dim() != ensemble.dim() || second.grid().steps() != ensemble.steps() {
        return Err(SmpError::InvalidInput(
            "second-order field does not match the ensemble".into(),
        ));
    }
    let n_part = ensemble.particles();
    let m = ensemble.steps();
    let d = ensemble.dim();
    let values = exec::map_range(n_part * m, |idx| {
        let (k, n) = (idx / n_part, idx % n_part);
        let u_star = ensemble.control(n, k);
        let base = point(ensemble, n, k, u_star);
        let (p, q, s) = (adjoint.p(n, k), adjoint.q(n, k), adjoint.s_vec(n, k));
        let h_star = hamiltonian(model, gen, &base, p, q, s);
        let sigma_star = model.diffusion(&base).value;
        let i = base.regime.index();
        let cap_p = second.cap_p(i, k);
        let row = gen.row(i);
        let gamma_star: Vec<f64> = (0..d)
            .map(|j| model.jump(&base, Regime::from_index(j)).value)
            .collect();
        let mut worst = 0.0f64;
        for &u in control_grid {
            if u == u_star {
                continue;
            }
            let pt = Point { u, ..base };
            let dh = hamiltonian(model, gen, &pt, p, q, s) - h_star;
            let ds = model.diffusion(&pt).value - sigma_star;
            let mut v = dh + 0.5 * cap_p * ds * ds;
            for j in 0..d {
                if row[j] != 0.0 && j != i {
                    let dg = model.jump(&pt, Regime::from_index(j)).value - gamma_star[j];
                    v += 0.5 * (cap_p + second.cap_s(j, i, k)) * dg * dg * row[j];
                }
            }
            worst = worst.max(v);
        }
        worst
    });
    let ids: Vec<(usize, usize)> = (0..n_part * m).map(|idx| (idx % n_part, idx / n_part)).collect();
    Ok(CheckReport::new(vec![ConditionReport::from_values(
        "variational_inequality",
        &values,
        None,
        &ids,
        tol,
        cap,
    )]))
}

/// Conditions on the singular part of the candidate recorded in the ensemble.
///
/// * `singular_A`: `κ(t_k) + G(t_k, α_k) p_k ≤ tol` at every grid point.
/// * `singular_B`: the `ξ`-mass carried where `κ + G p < -tol` is at most the
///   cap fraction of the total mass; zero mass passes.
pub fn check_singular_conditions(
    model: &dyn ControlModel,
    ensemble: &ParticleEnsemble,
    adjoint: &AdjointSample,
    tol: f64,
    cap: f64,
) -> Result<CheckReport> {
    check_shapes(ensemble, adjoint)?;
    let n_part = ensemble.particles();
    let m = ensemble.steps();
    let grid = ensemble.grid();
    let total = n_part * (m + 1);
    let switching = |n: usize, k: usize| {
        let t = grid.time(k);
        model.singular_cost(t) + model.singular_coefficient(t, ensemble.regime(n, k)) * adjoint.p(n, k)
    };
    let a_values = exec::map_range(total, |idx| switching(idx % n_part, idx / n_part));
    let a_ids: Vec<(usize, usize)> = (0..total).map(|idx| (idx % n_part, idx / n_part)).collect();
    let cond_a = ConditionReport::from_values("singular_A", &a_values, None, &a_ids, tol, cap);

    // mass of step k sits at grid point k + 1
    let mut b_values = Vec::new();
    let mut b_weights = Vec::new();
    let mut b_ids = Vec::new();
    for k in 0..m {
        for n in 0..n_part {
            let mass = ensemble.singular(n, k);
            if mass > 0.0 {
                b_values.push(-switching(n, k + 1));
                b_weights.push(mass);
                b_ids.push((n, k + 1));
            }
        }
    }
    let cond_b =
        ConditionReport::from_values("singular_B", &b_values, Some(&b_weights), &b_ids, tol, cap);
    Ok(CheckReport::new(vec![cond_a, cond_b]))
}

#[derive(Debug, Clone, Copy)]
pub struct SufficientOptions {
    /// Tolerance of the maximum-condition and singular sub-checks.
    pub tol: f64,
    /// Tolerance on the largest Hessian eigenvalue.
    pub concavity_tol: f64,
    pub cap: f64,
    /// Number of sampled points for the concavity sub-check.
    pub samples: usize,
    pub seed: u64,
}

/// Largest eigenvalue of the second-difference Hessian of `f` at `z`.
fn max_hessian_eigenvalue<F: Fn(&[f64]) -> f64>(f: F, z: &[f64]) -> f64 {
    let dim = z.len();
    let e = HESSIAN_STEP;
    let mut hess = DMatrix::<f64>::zeros(dim, dim);
    let at = |shifts: &[(usize, f64)]| {
        let mut w = z.to_vec();
        for &(i, s) in shifts {
            w[i] += s;
        }
        f(&w)
    };
    let f0 = f(z);
    for i in 0..dim {
        hess[(i, i)] = (at(&[(i, e)]) - 2.0 * f0 + at(&[(i, -e)])) / (e * e);
        for j in 0..i {
            let v = (at(&[(i, e), (j, e)]) - at(&[(i, e), (j, -e)]) - at(&[(i, -e), (j, e)])
                + at(&[(i, -e), (j, -e)]))
                / (4.0 * e * e);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    SymmetricEigen::new(hess).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Sufficient-condition suite: concavity of `H` in `(x, y, u)` and of `h` in
/// `(x, y)` at sampled points, the maximum condition on the control grid, and
/// the singular conditions.
pub fn check_sufficient(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    ensemble: &ParticleEnsemble,
    adjoint: &AdjointSample,
    opts: &SufficientOptions,
) -> Result<CheckReport> {
    check_shapes(ensemble, adjoint)?;
    let set = model.control_set();
    if !set.is_interval() {
        return Err(SmpError::Precondition(
            "sufficient conditions need a convex (interval) control set".into(),
        ));
    }
    let n_part = ensemble.particles();
    let m = ensemble.steps();
    let grid = ensemble.grid();
    let (u_lo, u_hi) = set.bounds();
    let (x_lo, x_hi) = (0..=m)
        .flat_map(|k| ensemble.states_at(k).iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));

    // Sample (particle, step) for the adjoint and regime, and (x, y, u) in the
    // box spanned by the ensemble and the control set.
    let samples = opts.samples.max(1);
    let mut rng = stream(opts.seed, 0, Channel::ControlNoise);
    let draws: Vec<(usize, usize, f64, f64, f64)> = (0..samples)
        .map(|_| {
            (
                rng.gen_range(0..n_part),
                rng.gen_range(0..m),
                rng.gen_range(x_lo..=x_hi),
                rng.gen_range(x_lo..=x_hi),
                rng.gen_range(u_lo..=u_hi),
            )
        })
        .collect();
    let h_values = exec::map_range(samples, |i| {
        let (n, k, x, y, u) = draws[i];
        let (p, q, s) = (adjoint.p(n, k), adjoint.q(n, k), adjoint.s_vec(n, k));
        let t = grid.time(k);
        let regime = ensemble.regime(n, k);
        max_hessian_eigenvalue(
            |z| hamiltonian(model, gen, &Point::new(t, z[0], z[1], z[2], regime), p, q, s),
            &[x, y, u],
        )
    });
    let terminal_values = exec::map_range(samples, |i| {
        let (n, _, x, y, _) = draws[i];
        let regime = ensemble.regime(n, m);
        max_hessian_eigenvalue(|z| model.terminal_cost(z[0], z[1], regime).value, &[x, y])
    });
    let draw_ids: Vec<(usize, usize)> = draws.iter().map(|d| (d.0, d.1)).collect();
    let terminal_ids: Vec<(usize, usize)> = draws.iter().map(|d| (d.0, m)).collect();
    let concave_h = ConditionReport::from_values(
        "concavity_H",
        &h_values,
        None,
        &draw_ids,
        opts.concavity_tol,
        opts.cap,
    );
    let concave_terminal = ConditionReport::from_values(
        "concavity_h",
        &terminal_values,
        None,
        &terminal_ids,
        opts.concavity_tol,
        opts.cap,
    );

    let control_grid = set.grid();
    let pitch = set.pitch();
    let max_values = exec::map_range(n_part * m, |idx| {
        let (k, n) = (idx / n_part, idx % n_part);
        let u_star = ensemble.control(n, k);
        let base = point(ensemble, n, k, u_star);
        let (p, q, s) = (adjoint.p(n, k), adjoint.q(n, k), adjoint.s_vec(n, k));
        let mut best = (f64::NEG_INFINITY, u_star);
        for &u in &control_grid {
            let v = hamiltonian(model, gen, &Point { u, ..base }, p, q, s);
            if v > best.0 {
                best = (v, u);
            }
        }
        (best.1 - u_star).abs() - pitch
    });
    let ids: Vec<(usize, usize)> = (0..n_part * m).map(|idx| (idx % n_part, idx / n_part)).collect();
    let maximum = ConditionReport::from_values("maximum_condition", &max_values, None, &ids, opts.tol, opts.cap);

    let singular = check_singular_conditions(model, ensemble, adjoint, opts.tol, opts.cap)?;
    Ok(CheckReport::new(vec![concave_h, concave_terminal, maximum]).merge(singular))
}

#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub label: String,
    pub j: f64,
    pub se: f64,
    /// `J(control) - J(candidate)` on common noise.
    pub difference: f64,
    /// Standard error of the paired difference.
    pub difference_se: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostComparison {
    pub candidate: CostRow,
    pub rows: Vec<CostRow>,
    pub any_flag: bool,
}

/// Evaluate the candidate and each perturbation on common random numbers and
/// flag perturbations whose cost exceeds the candidate's by more than twice
/// the standard error of the paired difference.
#[allow(clippy::too_many_arguments)]
pub fn compare_costs(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
    candidate: &ControlPair,
    perturbations: &[(String, ControlPair)],
) -> Result<CostComparison> {
    for c in std::iter::once(candidate).chain(perturbations.iter().map(|p| &p.1)) {
        if c.regular.needs_adjoint() {
            return Err(SmpError::Precondition(
                "cost comparison needs controls that do not read the adjoint".into(),
            ));
        }
    }
    let base = estimate_cost(model, &simulate(model, gen, candidate, grid, particles, seed)?);
    let rows = perturbations
        .iter()
        .map(|(label, control)| -> Result<CostRow> {
            let cost = estimate_cost(model, &simulate(model, gen, control, grid, particles, seed)?);
            let diff: Vec<f64> = cost
                .per_particle
                .iter()
                .zip(&base.per_particle)
                .map(|(a, b)| a - b)
                .collect();
            let difference = stats::mean(&diff);
            let difference_se = stats::std_error(&diff);
            Ok(CostRow {
                label: label.clone(),
                j: cost.mean,
                se: cost.std_error,
                difference,
                difference_se,
                flagged: difference > 2.0 * difference_se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let any_flag = rows.iter().any(|r| r.flagged);
    Ok(CostComparison {
        candidate: CostRow {
            label: "candidate".into(),
            j: base.mean,
            se: base.std_error,
            difference: 0.0,
            difference_se: 0.0,
            flagged: false,
        },
        rows,
        any_flag,
    })
}

/// `count` perturbations of `base` by independent per-step offsets drawn
/// uniformly from `[-amplitude, amplitude]`.
pub fn random_perturbations(
    base: &ControlPair,
    count: usize,
    amplitude: f64,
    steps: usize,
    seed: u64,
) -> Vec<(String, ControlPair)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let offsets: Vec<f64> = (0..steps).map(|_| rng.gen_range(-amplitude..=amplitude)).collect();
            let regular = match &base.regular {
                RegularControl::Feedback(law) => {
                    let law: Arc<dyn FeedbackLaw> = Arc::new(OffsetLaw {
                        base: law.clone(),
                        offsets,
                    });
                    RegularControl::Feedback(law)
                }
                RegularControl::OpenLoop(OpenLoop::Common(v)) => RegularControl::OpenLoop(
                    OpenLoop::Common(v.iter().zip(&offsets).map(|(a, b)| a + b).collect()),
                ),
                RegularControl::OpenLoop(OpenLoop::PerParticle {
                    particles,
                    steps: s,
                    values,
                }) => RegularControl::OpenLoop(OpenLoop::PerParticle {
                    particles: *particles,
                    steps: *s,
                    values: values
                        .iter()
                        .enumerate()
                        .map(|(idx, v)| v + offsets[idx % s])
                        .collect(),
                }),
            };
            (
                format!("perturbation-{}", i + 1),
                ControlPair::new(regular, base.singular.clone()),
            )
        })
        .collect()
}
