//! Continuous-time Markov chain with exact jump times, jump-counting processes
//! and their compensated martingales.

use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmpError};
use crate::grid::TimeGrid;

/// A chain state. Stored 0-based; `label()` gives the 1-based `e_i` index used
/// in configuration files and CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Regime(u16);

impl Regime {
    pub fn from_index(i: usize) -> Self {
        Regime(i as u16)
    }

    /// Build from a 1-based label; `None` for label 0.
    pub fn from_label(label: usize) -> Option<Self> {
        label.checked_sub(1).map(Self::from_index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> usize {
        self.0 as usize + 1
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.label())
    }
}

/// Rate matrix `(zeta_ij)` of a time-homogeneous chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneratorRepr", into = "GeneratorRepr")]
pub struct GeneratorMatrix {
    dim: usize,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GeneratorRepr {
    #[serde(rename = "D")]
    dim: usize,
    rates: Vec<Vec<f64>>,
}

impl TryFrom<GeneratorRepr> for GeneratorMatrix {
    type Error = SmpError;

    fn try_from(repr: GeneratorRepr) -> Result<Self> {
        if repr.rates.len() != repr.dim {
            return Err(SmpError::InvalidGenerator(format!(
                "D = {} but {} rows given",
                repr.dim,
                repr.rates.len()
            )));
        }
        GeneratorMatrix::new(repr.rates)
    }
}

impl From<GeneratorMatrix> for GeneratorRepr {
    fn from(g: GeneratorMatrix) -> Self {
        GeneratorRepr {
            dim: g.dim,
            rates: (0..g.dim).map(|i| g.row(i).to_vec()).collect(),
        }
    }
}

impl GeneratorMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(SmpError::InvalidGenerator("empty generator".into()));
        }
        let mut rates = Vec::with_capacity(dim * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(SmpError::InvalidGenerator(format!(
                    "row {} has {} entries, expected {dim}",
                    i + 1,
                    row.len()
                )));
            }
            rates.extend_from_slice(row);
        }
        let g = Self { dim, rates };
        g.validate()?;
        Ok(g)
    }

    /// Single-state chain (generator `[0]`).
    pub fn trivial() -> Self {
        Self {
            dim: 1,
            rates: vec![0.0],
        }
    }

    /// Two-state chain with rates `zeta_12` and `zeta_21`.
    pub fn two_state(rate_12: f64, rate_21: f64) -> Result<Self> {
        Self::new(vec![vec![-rate_12, rate_12], vec![rate_21, -rate_21]])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 1 {
            if self.rates[0] != 0.0 {
                return Err(SmpError::InvalidGenerator(
                    "single-state generator must be [0]".into(),
                ));
            }
            return Ok(());
        }
        for i in 0..d {
            let row = self.row(i);
            let scale = row.iter().map(|v| v.abs()).fold(1.0, f64::max);
            let sum: f64 = row.iter().sum();
            if !row.iter().all(|v| v.is_finite()) {
                return Err(SmpError::InvalidGenerator(format!("row {} not finite", i + 1)));
            }
            if sum.abs() > 1e-9 * scale {
                return Err(SmpError::InvalidGenerator(format!(
                    "row {} sums to {sum}, expected 0",
                    i + 1
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if i != j && !(v > 0.0) {
                    return Err(SmpError::InvalidGenerator(format!(
                        "off-diagonal rate zeta_{}{} = {v} must be positive",
                        i + 1,
                        j + 1
                    )));
                }
            }
            if !(row[i] < 0.0) {
                return Err(SmpError::InvalidGenerator(format!(
                    "diagonal zeta_{0}{0} = {1} must be negative",
                    i + 1,
                    row[i]
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self, from: Regime, to: Regime) -> f64 {
        self.rates[from.index() * self.dim + to.index()]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rates[i * self.dim..(i + 1) * self.dim]
    }

    /// Total exit rate `-zeta_ii`.
    pub fn exit_rate(&self, from: Regime) -> f64 {
        -self.rate(from, from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub from: Regime,
    pub to: Regime,
}

/// A sampled chain trajectory: exact jumps plus the state at each grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    grid: TimeGrid,
    states: Vec<Regime>,
    jumps: Vec<Jump>,
}

impl RegimePath {
    pub fn constant(grid: TimeGrid, state: Regime) -> Self {
        Self {
            grid,
            states: vec![state; grid.steps() + 1],
            jumps: Vec::new(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// State holding at grid time `t_k`.
    pub fn state(&self, k: usize) -> Regime {
        self.states[k]
    }

    pub fn states(&self) -> &[Regime] {
        &self.states
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn write_jumps_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,from,to")?;
        for j in &self.jumps {
            writeln!(w, "{},{},{}", j.time, j.from.label(), j.to.label())?;
        }
        Ok(())
    }
}

/// Exact simulation of the chain on `[0, T]`, restricted to `grid`.
pub fn sample_regime_path<R: Rng + ?Sized>(
    gen: &GeneratorMatrix,
    initial: Regime,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<RegimePath> {
    gen.validate()?;
    if initial.index() >= gen.dim() {
        return Err(SmpError::InvalidInput(format!(
            "initial regime {initial} outside 1..{}",
            gen.dim()
        )));
    }
    let horizon = grid.horizon();
    let mut jumps = Vec::new();
    let mut t = 0.0;
    let mut state = initial;
    loop {
        let rate = gen.exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        let hold = Exp::new(rate)
            .map_err(|e| SmpError::InvalidGenerator(e.to_string()))?
            .sample(rng);
        t += hold;
        if t > horizon {
            break;
        }
        let mut pick: f64 = rng.gen::<f64>() * rate;
        let mut next = state;
        for j in 0..gen.dim() {
            if j == state.index() {
                continue;
            }
            let to = Regime::from_index(j);
            next = to;
            pick -= gen.rate(state, to);
            if pick < 0.0 {
                break;
            }
        }
        jumps.push(Jump {
            time: t,
            from: state,
            to: next,
        });
        state = next;
    }

    let mut states = Vec::with_capacity(grid.steps() + 1);
    let mut cursor = 0;
    let mut current = initial;
    for k in 0..=grid.steps() {
        let tk = grid.time(k);
        while cursor < jumps.len() && jumps[cursor].time <= tk {
            current = jumps[cursor].to;
            cursor += 1;
        }
        states.push(current);
    }
    Ok(RegimePath {
        grid: *grid,
        states,
        jumps,
    })
}

/// Per-step jump counts, compensator increments and occupation times.
/// All arrays are step-major with `dim` entries per step.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMartingaleIncrements {
    dim: usize,
    counts: Vec<u32>,
    compensator: Vec<f64>,
    occupation: Vec<f64>,
}

impl JumpMartingaleIncrements {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.counts.len() / self.dim
    }

    /// Jumps into `e_j` during step `k`.
    pub fn count(&self, k: usize, j: usize) -> u32 {
        self.counts[k * self.dim + j]
    }

    pub fn compensator(&self, k: usize, j: usize) -> f64 {
        self.compensator[k * self.dim + j]
    }

    /// Time spent in `e_i` during step `k`.
    pub fn occupation(&self, k: usize, i: usize) -> f64 {
        self.occupation[k * self.dim + i]
    }

    /// Compensated increment of `Phi~_j` over step `k`.
    pub fn martingale(&self, k: usize, j: usize) -> f64 {
        self.count(k, j) as f64 - self.compensator(k, j)
    }

    /// `Phi~_j(T)` summed over the whole grid.
    pub fn terminal_martingale(&self, j: usize) -> f64 {
        (0..self.steps()).map(|k| self.martingale(k, j)).sum()
    }
}

pub fn compensated_increments(path: &RegimePath, gen: &GeneratorMatrix) -> JumpMartingaleIncrements {
    let d = gen.dim();
    let grid = path.grid();
    let m = grid.steps();
    let mut counts = vec![0u32; m * d];
    let mut occupation = vec![0.0; m * d];
    let mut cursor = 0;
    let jumps = path.jumps();
    for k in 0..m {
        let t_lo = grid.time(k);
        let t_hi = grid.time(k + 1);
        let mut state = path.state(k).index();
        let mut clock = t_lo;
        while cursor < jumps.len() && jumps[cursor].time <= t_hi {
            let jump = jumps[cursor];
            occupation[k * d + state] += jump.time - clock;
            counts[k * d + jump.to.index()] += 1;
            state = jump.to.index();
            clock = jump.time;
            cursor += 1;
        }
        occupation[k * d + state] += t_hi - clock;
    }
    let mut compensator = vec![0.0; m * d];
    for k in 0..m {
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                if i != j {
                    acc += gen.row(i)[j] * occupation[k * d + i];
                }
            }
            compensator[k * d + j] = acc;
        }
    }
    JumpMartingaleIncrements {
        dim: d,
        counts,
        compensator,
        occupation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Channel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_generators() {
        assert!(GeneratorMatrix::new(vec![vec![-1.0, 1.0], vec![2.0, -1.0]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![1.0, -1.0], vec![-2.0, 2.0]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![1.0]]).is_err());
        assert!(GeneratorMatrix::new(vec![vec![0.0]]).is_ok());
    }

    #[test]
    fn json_layout() {
        let g: GeneratorMatrix =
            serde_json::from_str(r#"{"D": 2, "rates": [[-1.0,1.0],[2.0,-2.0]]}"#).unwrap();
        assert_eq!(g.rate(Regime::from_index(1), Regime::from_index(0)), 2.0);
        let bad = serde_json::from_str::<GeneratorMatrix>(r#"{"D": 2, "rates": [[-1.0,1.0],[2.0,-1.0]]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn single_state_path_is_constant() {
        let grid = TimeGrid::new(5.0, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let path =
            sample_regime_path(&GeneratorMatrix::trivial(), Regime::default(), &grid, &mut rng)
                .unwrap();
        assert!(path.jumps().is_empty());
        let inc = compensated_increments(&path, &GeneratorMatrix::trivial());
        for k in 0..10 {
            assert_eq!(inc.martingale(k, 0), 0.0);
        }
    }

    #[test]
    fn no_jump_step_has_negative_compensated_increment() {
        let gen = GeneratorMatrix::new(vec![
            vec![-3.0, 1.0, 2.0],
            vec![0.5, -1.0, 0.5],
            vec![1.0, 1.0, -2.0],
        ])
        .unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let path = RegimePath::constant(grid, Regime::from_index(0));
        let inc = compensated_increments(&path, &gen);
        let h = grid.dt();
        for k in 0..4 {
            assert_eq!(inc.martingale(k, 0), 0.0);
            assert!((inc.martingale(k, 1) + 1.0 * h).abs() < 1e-15);
            assert!((inc.martingale(k, 2) + 2.0 * h).abs() < 1e-15);
        }
    }

    #[test]
    fn occupation_uses_exact_jump_times() {
        let gen = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let path = RegimePath {
            grid,
            states: vec![Regime::from_index(0), Regime::from_index(1), Regime::from_index(1)],
            jumps: vec![Jump {
                time: 0.2,
                from: Regime::from_index(0),
                to: Regime::from_index(1),
            }],
        };
        let inc = compensated_increments(&path, &gen);
        assert!((inc.occupation(0, 0) - 0.2).abs() < 1e-15);
        assert!((inc.occupation(0, 1) - 0.3).abs() < 1e-15);
        assert_eq!(inc.count(0, 1), 1);
        // into e_2 from e_1 at rate 1 for 0.2, into e_1 from e_2 at rate 2 for 0.3
        assert!((inc.compensator(0, 1) - 0.2).abs() < 1e-15);
        assert!((inc.compensator(0, 0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_jumps() {
        let gen = GeneratorMatrix::two_state(1.0, 2.0).unwrap();
        let grid = TimeGrid::new(10.0, 50).unwrap();
        let a = sample_regime_path(&gen, Regime::default(), &grid, &mut stream(9, 2, Channel::Chain))
            .unwrap();
        let b = sample_regime_path(&gen, Regime::default(), &grid, &mut stream(9, 2, Channel::Chain))
            .unwrap();
        assert_eq!(a, b);
        assert!(!a.jumps().is_empty());
    }

    #[test]
    fn symmetric_chain_occupies_states_equally() {
        // stationary law of the symmetric two-state chain is (1/2, 1/2)
        let gen = GeneratorMatrix::two_state(1.5, 1.5).unwrap();
        let grid = TimeGrid::new(2000.0, 2000).unwrap();
        let path =
            sample_regime_path(&gen, Regime::default(), &grid, &mut stream(3, 0, Channel::Chain))
                .unwrap();
        let inc = compensated_increments(&path, &gen);
        let occ0: f64 = (0..grid.steps()).map(|k| inc.occupation(k, 0)).sum();
        let frac = occ0 / grid.horizon();
        // integrated autocorrelation 1/(2*1.5) gives sd ~ sqrt(2 * 0.25 / 3 / 2000)
        assert!((frac - 0.5).abs() < 0.03, "occupation fraction {frac}");
    }

    #[test]
    fn jumps_strictly_increasing_and_states_consistent() {
        let gen = GeneratorMatrix::two_state(4.0, 3.0).unwrap();
        let grid = TimeGrid::new(3.0, 30).unwrap();
        let path =
            sample_regime_path(&gen, Regime::from_index(1), &grid, &mut stream(5, 0, Channel::Chain))
                .unwrap();
        assert!(path.jumps().windows(2).all(|w| w[1].time > w[0].time));
        for w in path.jumps().windows(2) {
            assert_eq!(w[0].to, w[1].from);
        }
        let inc = compensated_increments(&path, &gen);
        for k in 0..grid.steps() {
            let occ: f64 = (0..2).map(|i| inc.occupation(k, i)).sum();
            assert!((occ - grid.dt()).abs() < 1e-12);
        }
    }
}
