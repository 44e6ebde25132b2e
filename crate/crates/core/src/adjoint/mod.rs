//! Hamiltonian and adjoint processes.
//!
//! The first-order adjoint `(p, q, s)` solves the mean-field BSDE
//!
//! ```text
//! -dp = [H_x + E[H_y] φ'(X)] dt - q dB - Σ_j s_j dΦ~_j,
//!  p(T) = h_x + E[h_y] φ'(X(T)),
//! ```
//!
//! with `H = f + b p + σ q + Σ_j γ^j s_j ζ_ij`.

mod explicit;
mod lsmc;
mod second_order;
mod volterra;

use std::io::{self, Write};

pub use explicit::{riccati_rhs, solve_adjoint_interbank_explicit, solve_riccati, RiccatiSolution};
pub use lsmc::{solve_adjoint_lsmc, LsmcOptions};
pub use second_order::{
    second_order_coefficients, solve_second_order, solve_second_order_table,
    SecondOrderCoefficients, SecondOrderField,
};
pub use volterra::{solve_volterra_mean, VolterraOptions, VolterraSolution};

use crate::exec;
use crate::forward_sim::ParticleEnsemble;
use crate::model::{ControlModel, Partials, Point};
use crate::regime_chain::{GeneratorMatrix, Regime};

/// Per-particle adjoint triples on the grid points `0..=M`, step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSample {
    particles: usize,
    steps: usize,
    dim: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    s: Vec<f64>,
}

impl AdjointSample {
    pub fn zeros(particles: usize, steps: usize, dim: usize) -> Self {
        let len = particles * (steps + 1);
        Self {
            particles,
            steps,
            dim,
            p: vec![0.0; len],
            q: vec![0.0; len],
            s: vec![0.0; len * dim],
        }
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self, n: usize, k: usize) -> f64 {
        self.p[k * self.particles + n]
    }

    pub fn q(&self, n: usize, k: usize) -> f64 {
        self.q[k * self.particles + n]
    }

    pub fn s(&self, n: usize, k: usize, j: usize) -> f64 {
        self.s[(k * self.particles + n) * self.dim + j]
    }

    pub fn s_vec(&self, n: usize, k: usize) -> &[f64] {
        let at = (k * self.particles + n) * self.dim;
        &self.s[at..at + self.dim]
    }

    pub fn p_at(&self, k: usize) -> &[f64] {
        &self.p[k * self.particles..(k + 1) * self.particles]
    }

    pub fn q_at(&self, k: usize) -> &[f64] {
        &self.q[k * self.particles..(k + 1) * self.particles]
    }

    pub fn p_at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.p[k * self.particles..(k + 1) * self.particles]
    }

    pub fn q_at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.q[k * self.particles..(k + 1) * self.particles]
    }

    /// `s` values of step `k`, `dim` per particle.
    pub fn s_at_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.particles * self.dim;
        &mut self.s[k * w..(k + 1) * w]
    }

    pub fn set_p(&mut self, n: usize, k: usize, v: f64) {
        self.p[k * self.particles + n] = v;
    }

    pub fn shape_matches(&self, ensemble: &ParticleEnsemble) -> bool {
        self.particles == ensemble.particles()
            && self.steps == ensemble.steps()
            && self.dim == ensemble.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).chain(&self.s).all(|v| v.is_finite())
    }

    /// CSV with columns `particle,step,p,q,s_1..s_D`.
    pub fn write_csv<W: Write>(&self, mut w: W, limit: Option<usize>) -> io::Result<()> {
        write!(w, "particle,step,p,q")?;
        for j in 1..=self.dim {
            write!(w, ",s_{j}")?;
        }
        writeln!(w)?;
        let count = limit.unwrap_or(self.particles).min(self.particles);
        for n in 0..count {
            for k in 0..=self.steps {
                write!(w, "{n},{k},{},{}", self.p(n, k), self.q(n, k))?;
                for j in 0..self.dim {
                    write!(w, ",{}", self.s(n, k, j))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// `H(t, x, y, u, i, p, q, s) = f + b p + σ q + Σ_j γ^j s_j ζ_ij`.
pub fn hamiltonian(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    pt: &Point,
    p: f64,
    q: f64,
    s: &[f64],
) -> f64 {
    hamiltonian_partials(model, gen, pt, p, q, s).value
}

/// `H` together with its partials, assembled from the coefficient partials.
pub fn hamiltonian_partials(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    pt: &Point,
    p: f64,
    q: f64,
    s: &[f64],
) -> Partials {
    let mut acc = model.running_cost(pt) + model.drift(pt) * p + model.diffusion(pt) * q;
    let row = gen.row(pt.regime.index());
    for (j, (&sj, &rate)) in s.iter().zip(row).enumerate() {
        if sj != 0.0 && rate != 0.0 {
            acc = acc + model.jump(pt, Regime::from_index(j)) * (sj * rate);
        }
    }
    acc
}

/// Terminal values `h_x + mean(h_y) φ'(X)` for every particle.
pub fn terminal_adjoint(model: &dyn ControlModel, ensemble: &ParticleEnsemble) -> Vec<f64> {
    let m = ensemble.steps();
    let n_part = ensemble.particles();
    let mu = ensemble.mean_field(m);
    let parts = exec::map_range(n_part, |n| {
        model.terminal_cost(ensemble.x(n, m), mu, ensemble.regime(n, m))
    });
    let mean_hy = exec::chunked_sum(n_part, |n| parts[n].dy) / n_part as f64;
    (0..n_part)
        .map(|n| parts[n].dx + mean_hy * model.mean_field(ensemble.x(n, m)).1)
        .collect()
}

/// Driver `F = H_x + mean(H_y) φ'(X)` of step `k` under the given adjoint
/// values, one entry per particle.
#[allow(clippy::too_many_arguments)]
pub(crate) fn driver(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    ensemble: &ParticleEnsemble,
    k: usize,
    p: &[f64],
    q: &[f64],
    s: &[f64],
) -> Vec<f64> {
    let n_part = ensemble.particles();
    let d = ensemble.dim();
    let t = ensemble.grid().time(k);
    let mu = ensemble.mean_field(k);
    let parts = exec::map_range(n_part, |n| {
        let pt = Point::new(t, ensemble.x(n, k), mu, ensemble.control(n, k), ensemble.regime(n, k));
        hamiltonian_partials(model, gen, &pt, p[n], q[n], &s[n * d..(n + 1) * d])
    });
    let mean_hy = exec::chunked_sum(n_part, |n| parts[n].dy) / n_part as f64;
    (0..n_part)
        .map(|n| parts[n].dx + mean_hy * model.mean_field(ensemble.x(n, k)).1)
        .collect()
}
