#![allow(dead_code)]

use smp_core::control::{ControlPair, RegularControl};
use smp_core::forward_sim::{simulate, ParticleEnsemble};
use smp_core::model::{interbank_model, AffineModel, AffineRegime, ControlSet, InterbankModel, InterbankParams, Linear, Quadratic};
use smp_core::oracle::riccati_oracle;
use smp_core::{GeneratorMatrix, TimeGrid};

/// Unit inter-bank instance: a = b = c = 1, σ = 0.3, ρ = 0.5, ε = 1, β = 2,
/// κ = 1, x0 = 1, T = 1.
pub fn unit_params() -> InterbankParams {
    InterbankParams::single_regime(1.0, 1.0, 1.0, 0.3, 0.5, 1.0, 2.0, 1.0, 1.0, 1.0)
}

pub fn unit_model() -> InterbankModel {
    interbank_model(unit_params()).unwrap()
}

/// Ensemble under the Riccati feedback of `params`.
pub fn riccati_ensemble(params: &InterbankParams, steps: usize, particles: usize, seed: u64) -> ParticleEnsemble {
    let model = interbank_model(params.clone()).unwrap();
    let grid = TimeGrid::new(params.horizon, steps).unwrap();
    let law = riccati_oracle(params, &grid).unwrap().feedback;
    let control = ControlPair::regular_only(RegularControl::feedback(law));
    simulate(&model, &params.generator, &control, &grid, particles, seed).unwrap()
}

pub fn linear(c: f64, x: f64, y: f64, u: f64) -> Linear {
    Linear { c, x, y, u }
}

/// Single-regime affine model from drift, diffusion and running cost.
pub fn affine(drift: Linear, diffusion: Linear, running: Quadratic, terminal: Quadratic) -> AffineModel {
    let mut m = AffineModel::zero(0.5, 1.0, ControlSet::interval(-2.0, 2.0, 41).unwrap());
    m.regimes = vec![AffineRegime {
        drift,
        diffusion,
        running,
        terminal,
        ..Default::default()
    }];
    m
}

pub fn trivial() -> GeneratorMatrix {
    GeneratorMatrix::trivial()
}
