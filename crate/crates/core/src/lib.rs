//! Simulation laboratory for the peeling-by-layers exploration of Boltzmann
//! triangulations and its continuum counterpart, a continuous-state branching
//! process with branching mechanism `psi(l) = sqrt(8/3) l^(3/2)`.
//!
//! The library has three layers:
//!
//! * exact combinatorics and closed-form laws ([`combin`], [`laws`]),
//! * samplers and Markov-chain simulators ([`kernels`], [`peeling`], [`csbp`]),
//! * statistical comparison machinery and experiment drivers
//!   ([`stats`], [`experiments`]).
//!
//! Every simulator is deterministic given a master seed: replicate `i` draws
//! from an independent RNG stream derived from `(seed, i)`, so results do not
//! depend on the worker schedule.

pub mod combin;
pub mod csbp;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod laws;
pub mod peeling;
pub mod quad;
pub mod rng;
pub mod stats;

pub use error::Error;
