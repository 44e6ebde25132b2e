//! Second-order adjoint for coefficient fields that are deterministic given
//! `(t, regime)`.
//!
//! With `Q ≡ 0` and `S_j = P_j - P_i` the second-order equation reduces to a
//! regime-coupled linear ODE system. Writing `γ_j` for `γ^j_x` in regime `i`:
//!
//! ```text
//! -P_i' = (2 b_x + σ_x²) P_i + Σ_j [γ_j² P_j + 2 γ_j (P_j - P_i)] ζ_ij
//!         + Σ_{j≠i} ζ_ij (P_j - P_i) + H_xx,         P_i(T) = h_xx(i).
//! ```
//!
//! The last sum is the compensator of the jumps of `P(α_t)` itself. The
//! coefficients are piecewise constant on the grid, so each step is solved
//! exactly with a matrix exponential.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use super::{hamiltonian_partials, AdjointSample};
use crate::error::{Result, SmpError};
use crate::forward_sim::ParticleEnsemble;
use crate::grid::TimeGrid;
use crate::model::{ControlModel, Point};
use crate::regime_chain::{GeneratorMatrix, Regime};
use crate::stats;

/// Per-step, per-regime coefficient table. Index `k * D + i` for the scalar
/// fields and `(k * D + i) * D + j` for `γ^j_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderCoefficients {
    pub dim: usize,
    pub steps: usize,
    pub bx: Vec<f64>,
    pub sx: Vec<f64>,
    pub gx: Vec<f64>,
    pub hxx: Vec<f64>,
    /// `h_xx` per regime.
    pub terminal: Vec<f64>,
}

impl SecondOrderCoefficients {
    /// Constant coefficients on every step.
    pub fn constant(
        steps: usize,
        bx: &[f64],
        sx: &[f64],
        gx: &[Vec<f64>],
        hxx: &[f64],
        terminal: &[f64],
    ) -> Self {
        let dim = bx.len();
        let rep = |v: &[f64]| -> Vec<f64> { (0..steps).flat_map(|_| v.iter().copied()).collect() };
        let flat: Vec<f64> = gx.iter().flat_map(|row| row.iter().copied()).collect();
        Self {
            dim,
            steps,
            bx: rep(bx),
            sx: rep(sx),
            gx: rep(&flat),
            hxx: rep(hxx),
            terminal: terminal.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        let (d, m) = (self.dim, self.steps);
        let ok = self.bx.len() == m * d
            && self.sx.len() == m * d
            && self.hxx.len() == m * d
            && self.gx.len() == m * d * d
            && self.terminal.len() == d;
        if !ok {
            return Err(SmpError::Shape(format!(
                "second-order coefficient table does not match {m} steps x {d} regimes"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderField {
    grid: TimeGrid,
    dim: usize,
    /// `P_i(t_k)` at index `i * (M + 1) + k`.
    cap_p: Vec<f64>,
}

impl SecondOrderField {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cap_p(&self, i: usize, k: usize) -> f64 {
        self.cap_p[i * (self.grid.steps() + 1) + k]
    }

    /// Always zero in the supported class.
    pub fn cap_q(&self, _i: usize, _k: usize) -> f64 {
        0.0
    }

    /// `S_j = P_j - P_i` seen from regime `i`.
    pub fn cap_s(&self, j: usize, i: usize, k: usize) -> f64 {
        self.cap_p(j, k) - self.cap_p(i, k)
    }

    /// CSV with columns `t,P_1..P_D`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.dim {
            write!(w, ",P_{i}")?;
        }
        writeln!(w)?;
        for k in 0..=self.grid.steps() {
            write!(w, "{}", self.grid.time(k))?;
            for i in 0..self.dim {
                write!(w, ",{}", self.cap_p(i, k))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Solve the regime-coupled system backward from `P(T) = h_xx`.
pub fn solve_second_order_table(
    coeffs: &SecondOrderCoefficients,
    gen: &GeneratorMatrix,
    grid: &TimeGrid,
) -> Result<SecondOrderField> {
    coeffs.validate()?;
    let d = coeffs.dim;
    let m = grid.steps();
    if d != gen.dim() || coeffs.steps != m {
        return Err(SmpError::Shape(format!(
            "coefficients are {}x{}, generator/grid need {}x{m}",
            coeffs.steps,
            d,
            gen.dim()
        )));
    }
    let h = grid.dt();
    let mut cap_p = vec![0.0; d * (m + 1)];
    let mut state = DVector::from_column_slice(&coeffs.terminal);
    for i in 0..d {
        cap_p[i * (m + 1) + m] = state[i];
    }
    for k in (0..m).rev() {
        let mut aug = DMatrix::<f64>::zeros(d + 1, d + 1);
        for i in 0..d {
            let row = gen.row(i);
            let at = k * d + i;
            let mut diag = 2.0 * coeffs.bx[at] + coeffs.sx[at] * coeffs.sx[at];
            for j in 0..d {
                let g = coeffs.gx[at * d + j];
                if j == i {
                    diag += row[i] * g * g;
                } else {
                    aug[(i, j)] = h * row[j] * (g + 1.0) * (g + 1.0);
                    diag -= row[j] * (2.0 * g + 1.0);
                }
            }
            aug[(i, i)] = h * diag;
            aug[(i, d)] = h * coeffs.hxx[at];
        }
        let prop = aug.exp();
        let mut next = DVector::zeros(d);
        for i in 0..d {
            let mut v = prop[(i, d)];
            for j in 0..d {
                v += prop[(i, j)] * state[j];
            }
            next[i] = v;
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(SmpError::Numerical(format!(
                "second-order field not finite at step {k}"
            )));
        }
        state = next;
        for i in 0..d {
            cap_p[i * (m + 1) + k] = state[i];
        }
    }
    Ok(SecondOrderField {
        grid: *grid,
        dim: d,
        cap_p,
    })
}

/// Read `b_x`, `σ_x`, `γ_x`, `H_xx` and `h_xx` off the ensemble, per step and
/// regime, and refuse when they vary across particles by more than
/// `tol (1 + |value|)`.
pub fn second_order_coefficients(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    ensemble: &ParticleEnsemble,
    adjoint: &AdjointSample,
    tol: f64,
) -> Result<SecondOrderCoefficients> {
    if !adjoint.shape_matches(ensemble) || ensemble.dim() != gen.dim() {
        return Err(SmpError::Shape(
            "adjoint, ensemble and generator disagree in shape".into(),
        ));
    }
    let d = gen.dim();
    let m = ensemble.steps();
    let n_part = ensemble.particles();
    let grid = ensemble.grid();
    let mut out = SecondOrderCoefficients {
        dim: d,
        steps: m,
        bx: vec![0.0; m * d],
        sx: vec![0.0; m * d],
        gx: vec![0.0; m * d * d],
        hxx: vec![0.0; m * d],
        terminal: vec![0.0; d],
    };
    let zeros = vec![0.0; d];
    for k in 0..m {
        let t = grid.time(k);
        let mu = ensemble.mean_field(k);
        let u_bar = stats::mean(ensemble.controls_at(k));
        for i in 0..d {
            let regime = Regime::from_index(i);
            let members: Vec<usize> = (0..n_part).filter(|&n| ensemble.regime(n, k) == regime).collect();
            // width: b_x, σ_x, H_xx, γ_x^j
            let eval = |x: f64, u: f64, p: f64, q: f64, s: &[f64]| -> Vec<f64> {
                let pt = Point::new(t, x, mu, u, regime);
                let mut v = vec![
                    model.drift(&pt).dx,
                    model.diffusion(&pt).dx,
                    hamiltonian_partials(model, gen, &pt, p, q, s).dxx,
                ];
                v.extend((0..d).map(|j| model.jump(&pt, Regime::from_index(j)).dx));
                v
            };
            let samples: Vec<Vec<f64>> = if members.is_empty() {
                vec![eval(mu, u_bar, 0.0, 0.0, &zeros)]
            } else {
                members
                    .iter()
                    .map(|&n| {
                        eval(
                            ensemble.x(n, k),
                            ensemble.control(n, k),
                            adjoint.p(n, k),
                            adjoint.q(n, k),
                            adjoint.s_vec(n, k),
                        )
                    })
                    .collect()
            };
            let names = ["b_x", "sigma_x", "H_xx"];
            let reduced = reduce(&samples, tol, |c| {
                names.get(c).map(|s| s.to_string()).unwrap_or_else(|| format!("gamma{}_x", c - 2))
            }, k, i)?;
            out.bx[k * d + i] = reduced[0];
            out.sx[k * d + i] = reduced[1];
            out.hxx[k * d + i] = reduced[2];
            for j in 0..d {
                out.gx[(k * d + i) * d + j] = reduced[3 + j];
            }
        }
    }
    let mu = ensemble.mean_field(m);
    for i in 0..d {
        let regime = Regime::from_index(i);
        let members: Vec<usize> = (0..n_part).filter(|&n| ensemble.regime(n, m) == regime).collect();
        let samples: Vec<Vec<f64>> = if members.is_empty() {
            vec![vec![model.terminal_cost(mu, mu, regime).dxx]]
        } else {
            members
                .iter()
                .map(|&n| vec![model.terminal_cost(ensemble.x(n, m), mu, regime).dxx])
                .collect()
        };
        out.terminal[i] = reduce(&samples, tol, |_| "h_xx".into(), m, i)?[0];
    }
    Ok(out)
}

fn reduce<F: Fn(usize) -> String>(
    samples: &[Vec<f64>],
    tol: f64,
    name: F,
    k: usize,
    i: usize,
) -> Result<Vec<f64>> {
    let width = samples[0].len();
    let mut out = Vec::with_capacity(width);
    for c in 0..width {
        let lo = samples.iter().map(|s| s[c]).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(|s| s[c]).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > tol * (1.0 + lo.abs().max(hi.abs())) {
            return Err(SmpError::UnsupportedClass(format!(
                "{} varies across particles at step {k}, regime {} (range [{lo}, {hi}])",
                name(c),
                i + 1
            )));
        }
        out.push(samples[0][c]);
    }
    Ok(out)
}

/// Coefficients from the ensemble followed by the exact backward solve.
pub fn solve_second_order(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    ensemble: &ParticleEnsemble,
    adjoint: &AdjointSample,
    tol: f64,
) -> Result<SecondOrderField> {
    let coeffs = second_order_coefficients(model, gen, ensemble, adjoint, tol)?;
    solve_second_order_table(&coeffs, gen, ensemble.grid())
}
