//! Closed-form adjoint of the inter-bank problem when the coefficients do not
//! depend on the regime.
//!
//! Substituting `p = -η(t)(X - E[X])` into the adjoint equation and using
//! `E[p] = E[u] = 0` gives the terminal-value problem
//!
//! ```text
//! η' = b² η² + 2(a + bρ) η - (ε - ρ²),   η(T) = β,
//! ```
//!
//! with `q = -η σ` and `s = 0`.

use std::io::{self, Write};

use super::AdjointSample;
use crate::error::{Result, SmpError};
use crate::exec;
use crate::forward_sim::ParticleEnsemble;
use crate::grid::TimeGrid;
use crate::model::InterbankParams;
use crate::regime_chain::Regime;

/// Bound on `|η|` past which the integration is declared to blow up.
const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// `η(t_k)` for `k = 0..=M`.
    pub eta: Vec<f64>,
    /// Largest defect of the centred difference quotient against the ODE at
    /// interior grid points.
    pub ode_residual: f64,
}

impl RiccatiSolution {
    /// CSV with columns `t,eta`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,eta")?;
        for (k, eta) in self.eta.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.time(k), eta)?;
        }
        Ok(())
    }
}

/// Right-hand side `b²η² + 2(a + bρ)η - (ε - ρ²)` at time `t`.
pub fn riccati_rhs(params: &InterbankParams, t: f64, eta: f64) -> f64 {
    let r = Regime::default();
    let a = params.a_at(t, r);
    let b = params.b_at(t, r);
    b * b * eta * eta + 2.0 * (a + b * params.rho) * eta - (params.epsilon - params.rho * params.rho)
}

/// Integrate the Riccati equation backward from `η(T) = β` with classical RK4,
/// using `substeps` RK4 steps per grid step.
pub fn solve_riccati(params: &InterbankParams, grid: &TimeGrid, substeps: usize) -> Result<RiccatiSolution> {
    params.validate_shape()?;
    if !params.regime_independent() {
        return Err(SmpError::UnsupportedClass(
            "Riccati representation needs regime-independent a, b, c; use the Volterra solver"
                .into(),
        ));
    }
    let m = grid.steps();
    let sub = substeps.max(1);
    let dt = grid.dt() / sub as f64;
    let mut eta = vec![0.0; m + 1];
    eta[m] = params.beta;
    let mut y = params.beta;
    for k in (0..m).rev() {
        let t_hi = grid.time(k + 1);
        for j in 0..sub {
            // reversed time: dy/ds = -rhs(T - s, y)
            let t = t_hi - j as f64 * dt;
            let k1 = -riccati_rhs(params, t, y);
            let k2 = -riccati_rhs(params, t - 0.5 * dt, y + 0.5 * dt * k1);
            let k3 = -riccati_rhs(params, t - 0.5 * dt, y + 0.5 * dt * k2);
            let k4 = -riccati_rhs(params, t - dt, y + dt * k3);
            y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !y.is_finite() || y.abs() > BLOW_UP {
                return Err(SmpError::Numerical(format!(
                    "Riccati solution blew up near t = {:.6}",
                    t - dt
                )));
            }
        }
        eta[k] = y;
    }
    let h = grid.dt();
    let ode_residual = (1..m)
        .map(|k| {
            let quotient = (eta[k + 1] - eta[k - 1]) / (2.0 * h);
            (quotient - riccati_rhs(params, grid.time(k), eta[k])).abs()
        })
        .fold(0.0, f64::max);
    Ok(RiccatiSolution {
        grid: *grid,
        eta,
        ode_residual,
    })
}

/// Adjoint `p = -η(X - μ)`, `q = -ησ`, `s = 0` on the given ensemble.
pub fn solve_adjoint_interbank_explicit(
    params: &InterbankParams,
    ensemble: &ParticleEnsemble,
) -> Result<(AdjointSample, RiccatiSolution)> {
    let grid = ensemble.grid();
    let riccati = solve_riccati(params, grid, 4)?;
    let n_part = ensemble.particles();
    let m = ensemble.steps();
    let mut adj = AdjointSample::zeros(n_part, m, ensemble.dim());
    for k in 0..=m {
        let eta = riccati.eta[k];
        let mu = ensemble.mean_field(k);
        let xs = ensemble.states_at(k);
        exec::for_each_mut(adj.p_at_mut(k), |n, p| *p = -eta * (xs[n] - mu));
        adj.q_at_mut(k).fill(-eta * params.sigma);
    }
    Ok((adj, riccati))
}
