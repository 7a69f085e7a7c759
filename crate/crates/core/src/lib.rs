//! Two-rotor chain with a heat bath on the first rotor: simulation, the
//! averaged momentum of the fast rotor, a Lyapunov-type test function, the
//! Gibbs measure and relaxation experiments.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod dynamics;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod lyapunov;
pub mod potential;
pub mod relaxation;
pub mod rng;
pub mod selftest;
pub mod stats;

pub use dynamics::{ModelParams, Scheme, State, Stepper};
pub use error::{Error, Result};
pub use lyapunov::{LyapunovParams, RegionLabel};
pub use potential::PeriodicPotential;
