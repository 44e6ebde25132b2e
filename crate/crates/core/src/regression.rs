//! Cross-sectional least squares on a polynomial basis times regime
//! indicators, used for the conditional expectations of the backward sweeps.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::exec;
use crate::regime_chain::Regime;

const RANK_TOL: f64 = 1e-10;

/// Design description: powers of the standardized state up to `order`, plus
/// the standardized mean-field map when `with_phi` is set.
#[derive(Debug, Clone, Copy)]
pub struct Basis {
    pub order: usize,
    pub with_phi: bool,
}

impl Basis {
    fn width(&self, order: usize) -> usize {
        order + 1 + usize::from(self.with_phi)
    }
}

#[derive(Debug, Clone, Copy)]
struct Standardizer {
    center: f64,
    scale: f64,
}

impl Standardizer {
    fn from(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let center = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - center) * (x - center)).sum::<f64>() / n;
        let scale = if var > 1e-300 { var.sqrt() } else { 1.0 };
        Self { center, scale }
    }

    fn apply(&self, x: f64) -> f64 {
        (x - self.center) / self.scale
    }
}

fn features(out: &mut [f64], z: f64, zphi: Option<f64>, order: usize) {
    let mut v = 1.0;
    for slot in out.iter_mut().take(order + 1) {
        *slot = v;
        v *= z;
    }
    if let Some(w) = zphi {
        out[order + 1] = w;
    }
}

/// One fitted regression per regime (falling back to a pooled fit for
/// regimes with too few samples), sharing the design across several targets.
#[derive(Debug, Clone)]
pub struct RegimeFit {
    x_std: Standardizer,
    phi_std: Standardizer,
    /// `coefs[regime][target]`, each with the regime's effective order.
    coefs: Vec<Vec<Vec<f64>>>,
    orders: Vec<usize>,
    pooled: Vec<Vec<f64>>,
    pooled_order: usize,
    has_own: Vec<bool>,
}

impl RegimeFit {
    /// Fit `targets[t][i] ≈ ψ_t(x_i, regime_i)`.
    pub fn fit(
        basis: Basis,
        xs: &[f64],
        phis: &[f64],
        regimes: &[Regime],
        dim: usize,
        targets: &[&[f64]],
    ) -> Self {
        let x_std = Standardizer::from(xs);
        let phi_std = Standardizer::from(phis);
        let nt = targets.len();
        let zs: Vec<f64> = xs.iter().map(|x| x_std.apply(*x)).collect();
        let zphis: Vec<f64> = phis.iter().map(|p| phi_std.apply(*p)).collect();

        let mut coefs = Vec::with_capacity(dim);
        let mut orders = Vec::with_capacity(dim);
        let mut has_own = Vec::with_capacity(dim);
        let all: Vec<usize> = (0..xs.len()).collect();
        let (pooled, pooled_order) = solve_degrading(basis, &zs, &zphis, &all, targets)
            .unwrap_or_else(|| (vec![vec![0.0]; nt], 0));
        for r in 0..dim {
            let idx: Vec<usize> = (0..xs.len()).filter(|&i| regimes[i].index() == r).collect();
            match solve_degrading(basis, &zs, &zphis, &idx, targets) {
                Some((c, o)) => {
                    coefs.push(c);
                    orders.push(o);
                    has_own.push(true);
                }
                None => {
                    coefs.push(pooled.clone());
                    orders.push(pooled_order);
                    has_own.push(false);
                }
            }
        }
        Self {
            x_std,
            phi_std,
            coefs,
            orders,
            pooled,
            pooled_order,
            has_own,
        }
    }

    pub fn predict(&self, target: usize, x: f64, phi: f64, regime: Regime) -> f64 {
        let r = regime.index();
        eval(
            &self.coefs[r][target],
            self.orders[r],
            self.x_std.apply(x),
            self.phi_std.apply(phi),
        )
    }

    pub fn predict_pooled(&self, target: usize, x: f64, phi: f64) -> f64 {
        eval(
            &self.pooled[target],
            self.pooled_order,
            self.x_std.apply(x),
            self.phi_std.apply(phi),
        )
    }

    /// Whether regime `r` had its own (non-pooled) fit.
    pub fn has_own_fit(&self, r: usize) -> bool {
        self.has_own[r]
    }

    pub fn order(&self, r: usize) -> usize {
        self.orders[r]
    }
}

/// The φ coefficient is present only when the fit kept that column.
fn eval(c: &[f64], order: usize, z: f64, zphi: f64) -> f64 {
    let mut acc = 0.0;
    let mut v = 1.0;
    for coef in c.iter().take(order + 1) {
        acc += coef * v;
        v *= z;
    }
    if c.len() > order + 1 {
        acc += c[order + 1] * zphi;
    }
    acc
}

/// Least squares on the rows `idx`, lowering the polynomial order (and then
/// dropping the φ column) until the design has full rank. `None` when even a
/// constant cannot be fitted.
fn solve_degrading(
    basis: Basis,
    zs: &[f64],
    zphis: &[f64],
    idx: &[usize],
    targets: &[&[f64]],
) -> Option<(Vec<Vec<f64>>, usize)> {
    if idx.is_empty() {
        return None;
    }
    let mut candidates = Vec::new();
    for order in (0..=basis.order).rev() {
        if basis.with_phi {
            candidates.push(Basis {
                order,
                with_phi: true,
            });
        }
        candidates.push(Basis {
            order,
            with_phi: false,
        });
    }
    for (attempt, cand) in candidates.iter().enumerate() {
        if let Some(c) = solve(*cand, zs, zphis, idx, targets) {
            if attempt > 0 {
                warn!(
                    "regression basis degraded to order {} (phi column: {}) on {} samples",
                    cand.order,
                    cand.with_phi,
                    idx.len()
                );
            }
            return Some((c, cand.order));
        }
    }
    None
}

fn solve(
    basis: Basis,
    zs: &[f64],
    zphis: &[f64],
    idx: &[usize],
    targets: &[&[f64]],
) -> Option<Vec<Vec<f64>>> {
    let width = basis.width(basis.order);
    if idx.len() < width {
        return None;
    }
    let nt = targets.len();
    let acc = exec::chunked_accumulate(idx.len(), width * width + width * nt, |row, acc| {
        let i = idx[row];
        let mut f = [0.0; 16];
        let zphi = basis.with_phi.then(|| zphis[i]);
        features(&mut f[..width], zs[i], zphi, basis.order);
        for a in 0..width {
            for b in 0..width {
                acc[a * width + b] += f[a] * f[b];
            }
        }
        for (t, target) in targets.iter().enumerate() {
            let y = target[i];
            for a in 0..width {
                acc[width * width + t * width + a] += f[a] * y;
            }
        }
    });
    let xtx = DMatrix::from_row_slice(width, width, &acc[..width * width]);
    let svd = xtx.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < RANK_TOL {
        return None;
    }
    let mut out = Vec::with_capacity(nt);
    for t in 0..nt {
        let rhs = DVector::from_row_slice(&acc[width * width + t * width..width * width + (t + 1) * width]);
        let sol = svd.solve(&rhs, 0.0).ok()?;
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        out.push(sol.iter().copied().collect());
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_quadratic_per_regime() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 50.0 - 2.0).collect();
        let regimes: Vec<Regime> = (0..200).map(|i| Regime::from_index(i % 2)).collect();
        let y: Vec<f64> = xs
            .iter()
            .zip(&regimes)
            .map(|(x, r)| if r.index() == 0 { 1.0 + 2.0 * x } else { x * x - 3.0 })
            .collect();
        let fit = RegimeFit::fit(
            Basis {
                order: 2,
                with_phi: false,
            },
            &xs,
            &xs,
            &regimes,
            2,
            &[&y],
        );
        for x in [-1.0, 0.3, 1.7] {
            assert!((fit.predict(0, x, x, Regime::from_index(0)) - (1.0 + 2.0 * x)).abs() < 1e-9);
            assert!((fit.predict(0, x, x, Regime::from_index(1)) - (x * x - 3.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_state_degrades_to_constant() {
        let xs = vec![1.0; 50];
        let regimes = vec![Regime::from_index(0); 50];
        let y: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let fit = RegimeFit::fit(
            Basis {
                order: 2,
                with_phi: false,
            },
            &xs,
            &xs,
            &regimes,
            2,
            &[&y],
        );
        assert_eq!(fit.order(0), 0);
        assert!((fit.predict(0, 1.0, 1.0, Regime::from_index(0)) - 24.5).abs() < 1e-9);
        assert!(!fit.has_own_fit(1));
    }
}
