//! Least-squares Monte Carlo backward sweep for the first-order adjoint.

use super::{driver, terminal_adjoint, AdjointSample};
use crate::error::{Result, SmpError};
use crate::exec;
use crate::forward_sim::ParticleEnsemble;
use crate::model::{check_dimensions, ControlModel};
use crate::regime_chain::{GeneratorMatrix, Regime};
use crate::regression::{Basis, RegimeFit};

#[derive(Debug, Clone, Copy)]
pub struct LsmcOptions {
    /// Highest power of `X` in the regression basis.
    pub basis_order: usize,
}

impl Default for LsmcOptions {
    fn default() -> Self {
        Self { basis_order: 2 }
    }
}

/// Backward Euler sweep
///
/// ```text
/// ψ_k(x, i) ≈ E[p_{k+1} | X_k = x, α_k = e_i],   q_k ≈ E[(p_{k+1} - ψ_k) ΔB_k | ...] / h,
/// s_j = ψ_k(x, e_j) - ψ_k(x, α_k),              p_k = ψ_k + h F_k(ψ_k, q_k, s_k).
/// ```
pub fn solve_adjoint_lsmc(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    ensemble: &ParticleEnsemble,
    opts: &LsmcOptions,
) -> Result<AdjointSample> {
    check_dimensions(model, gen)?;
    if ensemble.dim() != gen.dim() {
        return Err(SmpError::Shape(format!(
            "ensemble has {} regimes, generator has {}",
            ensemble.dim(),
            gen.dim()
        )));
    }
    let n_part = ensemble.particles();
    let m = ensemble.steps();
    let d = gen.dim();
    let h = ensemble.grid().dt();
    let basis = Basis {
        order: opts.basis_order,
        with_phi: !model.mean_field_is_identity(),
    };

    let mut adj = AdjointSample::zeros(n_part, m, d);
    let terminal = terminal_adjoint(model, ensemble);
    adj.p_at_mut(m).copy_from_slice(&terminal);

    for k in (0..m).rev() {
        let xs = ensemble.states_at(k);
        let phis: Vec<f64> = xs.iter().map(|x| model.mean_field(*x).0).collect();
        let regimes: Vec<Regime> = (0..n_part).map(|n| ensemble.regime(n, k)).collect();
        let next = adj.p_at(k + 1).to_vec();
        let fit = RegimeFit::fit(basis, xs, &phis, &regimes, d, &[&next]);
        let psi: Vec<f64> = (0..n_part).map(|n| fit.predict(0, xs[n], phis[n], regimes[n])).collect();
        // centring by ψ leaves the conditional mean unchanged and removes the
        // part of the noise that is explained by X_k
        let scaled: Vec<f64> = (0..n_part)
            .map(|n| (next[n] - psi[n]) * ensemble.brownian(n, k) / h)
            .collect();
        let q_fit = RegimeFit::fit(basis, xs, &phis, &regimes, d, &[&scaled]);

        let rows = exec::map_range(n_part, |n| {
            let q = q_fit.predict(0, xs[n], phis[n], regimes[n]);
            let s: Vec<f64> = (0..d)
                .map(|j| {
                    if j == regimes[n].index() {
                        0.0
                    } else {
                        fit.predict(0, xs[n], phis[n], Regime::from_index(j)) - psi[n]
                    }
                })
                .collect();
            (q, s)
        });
        let q: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let s: Vec<f64> = rows.iter().flat_map(|r| r.1.iter().copied()).collect();
        let f = driver(model, gen, ensemble, k, &psi, &q, &s);
        let p: Vec<f64> = (0..n_part).map(|n| psi[n] + h * f[n]).collect();
        if let Some(n) = p.iter().chain(&q).chain(&s).position(|v| !v.is_finite()) {
            return Err(SmpError::Numerical(format!(
                "non-finite adjoint value at step {k} (entry {n})"
            )));
        }
        adj.p_at_mut(k).copy_from_slice(&p);
        adj.q_at_mut(k).copy_from_slice(&q);
        adj.s_at_mut(k).copy_from_slice(&s);
    }
    // the martingale parts at the last grid point carry no information;
    // repeat the final step so exported columns stay continuous
    if m > 0 {
        let q_last = adj.q_at(m - 1).to_vec();
        adj.q_at_mut(m).copy_from_slice(&q_last);
    }
    Ok(adj)
}
