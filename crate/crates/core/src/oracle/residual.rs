use serde::Serialize;

use crate::adjoint::{driver, terminal_adjoint, AdjointSample};
use crate::error::{Result, SmpError};
use crate::forward_sim::ParticleEnsemble;
use crate::model::ControlModel;
use crate::regime_chain::GeneratorMatrix;
use crate::stats;

/// Backward-Euler defect of the adjoint equation under a supplied `(p, q, s)`.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// Cross-sectional RMS of the centred defect of each step.
    pub per_step: Vec<f64>,
    /// Cross-sectional mean of the defect of each step.
    pub mean_defect: Vec<f64>,
    /// RMS of `p_M - (h_x + mean(h_y) φ'(X_M))`.
    pub terminal: f64,
    /// `sqrt(Σ_k per_step_k² + terminal²)`.
    pub aggregate: f64,
}

/// Per-step defect
///
/// ```text
/// d_k = p_{k+1} - p_k + F_k h - q_k ΔB_k - Σ_j s_{k,j} ΔΦ~_{k,j},
/// ```
///
/// with `F_k` the driver evaluated at `(p_k, q_k, s_k)` and ensemble means for
/// the mean-field terms. The defect is centred across particles before the
/// RMS is taken: the empirical mean field couples every particle to the
/// sample mean of the Brownian increments, a common term that is not part of
/// the discretization error.
pub fn bsde_residual(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    ensemble: &ParticleEnsemble,
    adjoint: &AdjointSample,
) -> Result<ResidualReport> {
    if !adjoint.shape_matches(ensemble) {
        return Err(SmpError::Shape(
            "adjoint sample does not match the ensemble".into(),
        ));
    }
    let n_part = ensemble.particles();
    let m = ensemble.steps();
    let d = ensemble.dim();
    let h = ensemble.grid().dt();
    let mut per_step = Vec::with_capacity(m);
    let mut mean_defect = Vec::with_capacity(m);
    for k in 0..m {
        let s: Vec<f64> = (0..n_part).flat_map(|n| adjoint.s_vec(n, k).iter().copied()).collect();
        let f = driver(model, gen, ensemble, k, adjoint.p_at(k), adjoint.q_at(k), &s);
        let defect: Vec<f64> = (0..n_part)
            .map(|n| {
                let mut v = adjoint.p(n, k + 1) - adjoint.p(n, k) + f[n] * h
                    - adjoint.q(n, k) * ensemble.brownian(n, k);
                for j in 0..d {
                    v -= adjoint.s(n, k, j) * ensemble.jump_martingale(n, k, j);
                }
                v
            })
            .collect();
        let mean = stats::mean(&defect);
        let centred: Vec<f64> = defect.iter().map(|v| v - mean).collect();
        per_step.push(stats::rms(&centred));
        mean_defect.push(mean);
    }
    let target = terminal_adjoint(model, ensemble);
    let gap: Vec<f64> = (0..n_part).map(|n| adjoint.p(n, m) - target[n]).collect();
    let terminal = stats::rms(&gap);
    let aggregate = (per_step.iter().map(|v| v * v).sum::<f64>() + terminal * terminal).sqrt();
    Ok(ResidualReport {
        per_step,
        mean_defect,
        terminal,
        aggregate,
    })
}
