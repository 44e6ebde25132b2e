//! Independent reference computations used to validate the main pipeline.

mod brute_force;
mod residual;

pub use brute_force::{
    brute_force_open_loop, AtomMenu, BruteForceResult, BruteForceRow, CoarseInstance, ENUMERATION_LIMIT,
};
pub use residual::{bsde_residual, ResidualReport};

use crate::adjoint::{solve_riccati, RiccatiSolution};
use crate::control::{AdjointSource, InterbankRate};
use crate::error::Result;
use crate::grid::TimeGrid;
use crate::model::InterbankParams;

/// RK4 steps per grid step used by the oracle.
const ORACLE_SUBSTEPS: usize = 8;

#[derive(Debug, Clone)]
pub struct RiccatiOracle {
    pub solution: RiccatiSolution,
    /// `u* = b(-η(x - μ)) + ρ(μ - x)`.
    pub feedback: InterbankRate,
    /// Predicted `q(t_k) = -η(t_k) σ`.
    pub q: Vec<f64>,
}

/// Closed-form candidate for regime-independent inter-bank parameters.
pub fn riccati_oracle(params: &InterbankParams, grid: &TimeGrid) -> Result<RiccatiOracle> {
    let solution = solve_riccati(params, grid, ORACLE_SUBSTEPS)?;
    let q = solution.eta.iter().map(|e| -e * params.sigma).collect();
    let feedback = InterbankRate {
        gain: params.b.clone(),
        horizon: params.horizon,
        rho: params.rho,
        source: AdjointSource::Riccati(solution.eta.clone()),
        snap_to: None,
    };
    Ok(RiccatiOracle {
        solution,
        feedback,
        q,
    })
}
