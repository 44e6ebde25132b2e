//! Inter-bank adjoint with regime-dependent mean reversion.
//!
//! With `G_t^r = exp(-∫_t^r a(v, α_v) dv)` the adjoint has the representation
//!
//! ```text
//! p(t) = E_t[ G_t^T p(T) - ∫_t^T G_t^r (g(r) - m(r)) dr ],
//! g = ρ(u - E[u]) - ε(E[X] - X),   m(t) = E[a(t, α_t) p(t)],
//! ```
//!
//! and multiplying by `a(t, α_t)` and taking expectations gives a linear
//! Volterra equation for `m`:
//!
//! ```text
//! m(t) = -β Cov(a G_t^T, X_T)
//!        - ∫_t^T [ ρ Cov(a G_t^r, u_r) + ε Cov(a G_t^r, X_r) - m(r) E[a G_t^r] ] dr.
//! ```

use super::{terminal_adjoint, AdjointSample};
use crate::error::{Result, SmpError};
use crate::exec;
use crate::forward_sim::ParticleEnsemble;
use crate::model::InterbankParams;
use crate::regime_chain::{compensated_increments, Regime};
use crate::regression::{Basis, RegimeFit};
use crate::stats;

#[derive(Debug, Clone, Copy)]
pub struct VolterraOptions {
    pub max_iterations: usize,
    pub tol: f64,
    pub basis_order: usize,
}

impl Default for VolterraOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tol: 1e-10,
            basis_order: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VolterraSolution {
    pub adjoint: AdjointSample,
    /// `m(t_k)`, `k = 0..=M`.
    pub m: Vec<f64>,
    /// `max_k |m_k - c_k - Σ_r K_kr m_r|` at the returned iterate.
    pub residual: f64,
    pub iterations: usize,
    /// `max_k |m_k - mean_n a(t_k, α_k) p_k|` of the reconstructed adjoint.
    pub consistency_gap: f64,
}

/// Discretized forcing `c_k` and kernel rows `K_kr = h E[a_k G_k^r]`
/// (`r = k..M-1`) of the Volterra equation.
struct Discretized {
    forcing: Vec<f64>,
    kernel: Vec<Vec<f64>>,
}

pub fn solve_volterra_mean(
    params: &InterbankParams,
    ensemble: &ParticleEnsemble,
    opts: &VolterraOptions,
) -> Result<VolterraSolution> {
    params.validate_shape()?;
    let gen = &params.generator;
    if ensemble.dim() != gen.dim() {
        return Err(SmpError::Shape(format!(
            "ensemble has {} regimes, parameters have {}",
            ensemble.dim(),
            gen.dim()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(SmpError::InvalidInput("Volterra tolerance must be positive".into()));
    }
    let n_part = ensemble.particles();
    let m_steps = ensemble.steps();
    let grid = *ensemble.grid();
    let h = grid.dt();

    // Pathwise ∫_0^{t_k} a dv from exact occupation times; `a` is frozen at
    // the left end of each step.
    let integrals = exec::map_range(n_part, |n| {
        let inc = compensated_increments(ensemble.path(n), gen);
        let mut acc = vec![0.0; m_steps + 1];
        for k in 0..m_steps {
            let t = grid.time(k);
            let step: f64 = (0..gen.dim())
                .map(|i| params.a_at(t, Regime::from_index(i)) * inc.occupation(k, i))
                .sum();
            acc[k + 1] = acc[k] + step;
        }
        acc
    });
    let a_left = |n: usize, k: usize| params.a_at(grid.time(k), ensemble.regime(n, k));
    let mean_u: Vec<f64> = (0..m_steps).map(|r| stats::mean(ensemble.controls_at(r))).collect();
    let mean_x: Vec<f64> = (0..=m_steps).map(|r| stats::mean(ensemble.states_at(r))).collect();

    let rows = exec::map_range(m_steps + 1, |k| {
        // per r: Σ W, Σ W X_r, Σ W u_r
        let width = 3 * (m_steps + 1 - k);
        let sums = (0..n_part).fold(vec![0.0; width], |mut acc, n| {
            let ak = a_left(n, k);
            let ik = integrals[n][k];
            for (slot, r) in (k..=m_steps).enumerate() {
                let w = ak * (ik - integrals[n][r]).exp();
                acc[3 * slot] += w;
                acc[3 * slot + 1] += w * ensemble.x(n, r);
                if r < m_steps {
                    acc[3 * slot + 2] += w * ensemble.control(n, r);
                }
            }
            acc
        });
        let inv = 1.0 / n_part as f64;
        let mut forcing = 0.0;
        let mut kernel = Vec::with_capacity(m_steps - k);
        for (slot, r) in (k..=m_steps).enumerate() {
            let ew = sums[3 * slot] * inv;
            let cov_x = sums[3 * slot + 1] * inv - ew * mean_x[r];
            if r == m_steps {
                forcing -= params.beta * cov_x;
            } else {
                let cov_u = sums[3 * slot + 2] * inv - ew * mean_u[r];
                forcing -= h * (params.rho * cov_u + params.epsilon * cov_x);
                kernel.push(h * ew);
            }
        }
        (forcing, kernel)
    });
    let (forcing, kernel): (Vec<f64>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let disc = Discretized { forcing, kernel };

    let (m, residual, iterations) = fixed_point(&disc, opts)?;
    let adjoint = reconstruct(params, ensemble, &integrals, &m, opts.basis_order, &mean_u)?;
    let consistency_gap = (0..=m_steps)
        .map(|k| {
            let e = exec::chunked_sum(n_part, |n| a_left(n, k) * adjoint.p(n, k)) / n_part as f64;
            (m[k] - e).abs()
        })
        .fold(0.0, f64::max);
    Ok(VolterraSolution {
        adjoint,
        m,
        residual,
        iterations,
        consistency_gap,
    })
}

fn apply(disc: &Discretized, m: &[f64]) -> Vec<f64> {
    disc.forcing
        .iter()
        .zip(&disc.kernel)
        .enumerate()
        .map(|(k, (c, row))| c + row.iter().enumerate().map(|(j, w)| w * m[k + j]).sum::<f64>())
        .collect()
}

fn fixed_point(disc: &Discretized, opts: &VolterraOptions) -> Result<(Vec<f64>, f64, usize)> {
    let mut m = disc.forcing.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let next = apply(disc, &m);
        residual = next
            .iter()
            .zip(&m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        m = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return Ok((m, residual, it));
        }
    }
    Err(SmpError::NoConvergence {
        iterations: opts.max_iterations,
        residual,
    })
}

fn reconstruct(
    params: &InterbankParams,
    ensemble: &ParticleEnsemble,
    integrals: &[Vec<f64>],
    m: &[f64],
    order: usize,
    mean_u: &[f64],
) -> Result<AdjointSample> {
    let n_part = ensemble.particles();
    let steps = ensemble.steps();
    let d = ensemble.dim();
    let h = ensemble.grid().dt();
    let model = crate::model::interbank_model_unchecked(params.clone());
    let mut adj = AdjointSample::zeros(n_part, steps, d);
    adj.p_at_mut(steps).copy_from_slice(&terminal_adjoint(&model, ensemble));
    let basis = Basis {
        order,
        with_phi: false,
    };
    for k in (0..steps).rev() {
        let xs = ensemble.states_at(k);
        let regimes: Vec<Regime> = (0..n_part).map(|n| ensemble.regime(n, k)).collect();
        let discounted: Vec<f64> = (0..n_part)
            .map(|n| (integrals[n][k] - integrals[n][k + 1]).exp() * adj.p(n, k + 1))
            .collect();
        let fit = RegimeFit::fit(basis, xs, xs, &regimes, d, &[&discounted]);
        let own: Vec<f64> = (0..n_part).map(|n| fit.predict(0, xs[n], xs[n], regimes[n])).collect();
        let scaled: Vec<f64> = (0..n_part)
            .map(|n| (discounted[n] - own[n]) * ensemble.brownian(n, k) / h)
            .collect();
        let q_fit = RegimeFit::fit(basis, xs, xs, &regimes, d, &[&scaled]);
        let mu = ensemble.mean_field(k);
        let rows = exec::map_range(n_part, |n| {
            let own = own[n];
            let q = q_fit.predict(0, xs[n], xs[n], regimes[n]);
            let g = params.rho * (ensemble.control(n, k) - mean_u[k]) - params.epsilon * (mu - xs[n]);
            let s: Vec<f64> = (0..d)
                .map(|j| {
                    if j == regimes[n].index() {
                        0.0
                    } else {
                        fit.predict(0, xs[n], xs[n], Regime::from_index(j)) - own
                    }
                })
                .collect();
            (own - h * (g - m[k]), q, s)
        });
        for (n, (p, q, s)) in rows.into_iter().enumerate() {
            if !(p.is_finite() && q.is_finite() && s.iter().all(|v| v.is_finite())) {
                return Err(SmpError::Numerical(format!(
                    "non-finite adjoint value at step {k}, particle {n}"
                )));
            }
            adj.p_at_mut(k)[n] = p;
            adj.q_at_mut(k)[n] = q;
            adj.s_at_mut(k)[n * d..(n + 1) * d].copy_from_slice(&s);
        }
    }
    if steps > 0 {
        let q_last = adj.q_at(steps - 1).to_vec();
        adj.q_at_mut(steps).copy_from_slice(&q_last);
    }
    Ok(adj)
}
