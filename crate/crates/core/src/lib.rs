//! Monte Carlo laboratory for branching random walks (BRW) in the boundary case.
//!
//! The crate is organised bottom-up:
//!
//! * [`laws`]: reproduction point processes and their log-Laplace transform.
//! * [`walk`]: the associated one-dimensional random walk, its renewal
//!   structure, conditioned samplers and the continuum reference processes
//!   (meander, excursion, Bessel bridges).
//! * [`brw`]: exact forward simulation of the branching random walk and the
//!   martingale readouts.
//! * [`spine`]: many-to-one estimators, spinal samplers and brute-force
//!   enumeration oracles for small trees.
//! * [`gibbs`]: Gibbs (polymer) measures, trajectory means, overlaps.
//! * [`experiments`]: the declarative harness that assembles everything into
//!   scaling series and verdicts.
//! * [`cli`]: command-line dispatch used by the `brwlab` binary.

pub mod brw;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod functional;
pub mod gibbs;
pub mod laws;
pub mod rng;
pub mod spine;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
