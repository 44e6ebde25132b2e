//! Exhaustive open-loop search on coarse instances with common random numbers.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::control::{Atom, AtomSize, ControlPair, OpenLoop, RegularControl, SingularControl};
use crate::error::{Result, SmpError};
use crate::exec;
use crate::forward_sim::{estimate_cost, simulate, CostEstimate};
use crate::grid::TimeGrid;
use crate::model::ControlModel;
use crate::regime_chain::GeneratorMatrix;

/// Largest number of enumerated controls.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

const MAX_STEPS: usize = 5;
const MAX_VALUES: usize = 9;
const MAX_ATOMS: usize = 3;
const MAX_SIZES: usize = 4;

/// Candidate atom: either absent or one of `sizes`, placed at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomMenu {
    pub time: f64,
    pub sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseInstance {
    pub grid: TimeGrid,
    pub control_values: Vec<f64>,
    pub atoms: Vec<AtomMenu>,
    pub particles: usize,
    pub seed: u64,
}

impl CoarseInstance {
    /// `|U|^M · Π_a (1 + |sizes_a|)`, saturating.
    pub fn cardinality(&self) -> u128 {
        let mut c: u128 = 1;
        for _ in 0..self.grid.steps() {
            c = c.saturating_mul(self.control_values.len() as u128);
        }
        for a in &self.atoms {
            c = c.saturating_mul(1 + a.sizes.len() as u128);
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.grid.steps();
        if m > MAX_STEPS {
            return Err(SmpError::InvalidInput(format!(
                "coarse instance has {m} steps (at most {MAX_STEPS})"
            )));
        }
        if self.control_values.is_empty() || self.control_values.len() > MAX_VALUES {
            return Err(SmpError::InvalidInput(format!(
                "coarse control grid needs 1..={MAX_VALUES} values, got {}",
                self.control_values.len()
            )));
        }
        if self.atoms.len() > MAX_ATOMS || self.atoms.iter().any(|a| a.sizes.len() > MAX_SIZES) {
            return Err(SmpError::InvalidInput(format!(
                "atom menu allows at most {MAX_ATOMS} atoms with {MAX_SIZES} sizes each"
            )));
        }
        if self.particles == 0 {
            return Err(SmpError::InvalidInput("need at least one particle".into()));
        }
        let card = self.cardinality();
        if card > ENUMERATION_LIMIT {
            return Err(SmpError::GuardExceeded {
                cardinality: card,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok(())
    }

    /// Control number `id` in mixed-radix order: the u-sequence digits vary
    /// slowest, the last atom choice fastest.
    pub fn control(&self, id: usize) -> (Vec<f64>, Vec<(f64, f64)>) {
        let mut rest = id;
        let mut atoms = Vec::new();
        for a in self.atoms.iter().rev() {
            let radix = a.sizes.len() + 1;
            let digit = rest % radix;
            rest /= radix;
            if digit > 0 {
                atoms.push((a.time, a.sizes[digit - 1]));
            }
        }
        atoms.reverse();
        let v = self.control_values.len();
        let m = self.grid.steps();
        let mut u = vec![0.0; m];
        for k in (0..m).rev() {
            u[k] = self.control_values[rest % v];
            rest /= v;
        }
        (u, atoms)
    }
}

fn pair(u: Vec<f64>, atoms: &[(f64, f64)]) -> ControlPair {
    ControlPair::new(
        RegularControl::OpenLoop(OpenLoop::Common(u)),
        SingularControl {
            atoms: atoms
                .iter()
                .map(|&(time, size)| Atom {
                    time,
                    size: AtomSize::Common(size),
                })
                .collect(),
            density: None,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceRow {
    pub id: usize,
    pub u: Vec<f64>,
    pub atoms: Vec<(f64, f64)>,
    pub j: f64,
    pub se: f64,
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub best: ControlPair,
    pub best_id: usize,
    /// Cost sample of the best control, for paired comparisons.
    pub best_cost: CostEstimate,
    pub table: Vec<BruteForceRow>,
}

impl BruteForceResult {
    pub fn best_row(&self) -> &BruteForceRow {
        &self.table[self.best_id]
    }

    /// CSV with columns `control-id,u-sequence,atoms,J,SE`; sequences are
    /// `;`-separated and atoms are written `time:size`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "control-id,u-sequence,atoms,J,SE")?;
        for row in &self.table {
            let u: Vec<String> = row.u.iter().map(|v| v.to_string()).collect();
            let a: Vec<String> = row.atoms.iter().map(|(t, s)| format!("{t}:{s}")).collect();
            writeln!(w, "{},{},{},{},{}", row.id, u.join(";"), a.join(";"), row.j, row.se)?;
        }
        Ok(())
    }
}

/// Evaluate every open-loop control of the instance on the same noise and
/// return the maximizer of the estimated criterion (first one on ties).
pub fn brute_force_open_loop(
    model: &dyn ControlModel,
    gen: &GeneratorMatrix,
    instance: &CoarseInstance,
) -> Result<BruteForceResult> {
    instance.validate()?;
    let card = instance.cardinality() as usize;
    let evaluate = |u: Vec<f64>, atoms: &[(f64, f64)]| -> Result<CostEstimate> {
        let control = pair(u, atoms);
        let ens = simulate(model, gen, &control, &instance.grid, instance.particles, instance.seed)?;
        Ok(estimate_cost(model, &ens))
    };
    let evaluated = exec::map_range(card, |id| -> Result<BruteForceRow> {
        let (u, atoms) = instance.control(id);
        let cost = evaluate(u.clone(), &atoms)?;
        Ok(BruteForceRow {
            id,
            u,
            atoms,
            j: cost.mean,
            se: cost.std_error,
        })
    });
    let table = evaluated.into_iter().collect::<Result<Vec<_>>>()?;
    let mut best_id = 0;
    for row in &table {
        if row.j > table[best_id].j {
            best_id = row.id;
        }
    }
    let row = &table[best_id];
    // same streams, so this reproduces the tabulated estimate exactly
    let best_cost = evaluate(row.u.clone(), &row.atoms)?;
    let best = pair(row.u.clone(), &row.atoms);
    Ok(BruteForceResult {
        best,
        best_id,
        best_cost,
        table,
    })
}
