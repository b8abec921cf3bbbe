//! Simulation and verification toolkit for the GHZ three-player game.
//!
//! - [`qsim`]: dense statevector engine used for every quantum prediction.
//! - [`game`]: referee, strategies, detector-efficiency model and the seeded
//!   Monte Carlo harness.
//! - [`lhv`]: instruction-kit local hidden variable model.
//! - [`teleport`]: the entanglement-swapping variant with Bell-outcome flips.
//! - [`logic`]: ±1 parity systems, exhaustive and GF(2) solvers, and the
//!   classical and counterfactual impossibility systems.
//! - [`tsvf`]: pre/post-selected (ABL) inference and the product-rule check.

pub mod game;
pub mod lhv;
pub mod logic;
pub mod qsim;
pub mod rng;
pub mod teleport;
pub mod tsvf;

pub use qsim::{PauliAxis, Sign, StateVector};
pub use rng::RandomSource;
