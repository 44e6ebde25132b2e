//! Stochastic maximum principle toolkit for singular mean-field control with
//! Markov regime switching.
//!
//! The crate simulates the controlled McKean–Vlasov state equation with an
//! interacting particle system, solves the first- and second-order adjoint
//! equations, and checks the necessary and sufficient optimality conditions
//! for a candidate control. A built-in inter-bank lending model and a set of
//! independent oracles (Riccati closed form, BSDE residual, brute-force
//! enumeration) support validation.
//!
//! With the default `parallel` feature the particle loops run on the rayon
//! pool; every reduction uses fixed chunking, so results do not depend on the
//! number of worker threads.

pub mod adjoint;
pub mod control;
pub mod error;
pub mod exec;
pub mod forward_sim;
pub mod grid;
pub mod model;
pub mod mp_check;
pub mod oracle;
pub mod regime_chain;
pub mod regression;
pub mod rng;
pub mod stats;

pub use error::{Result, SmpError};
pub use grid::{Schedule, TimeGrid};
pub use regime_chain::{GeneratorMatrix, Regime};
