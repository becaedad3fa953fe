//! Cache-aided K-user MISO broadcast channel with imperfect current and
//! perfect delayed CSIT.
//!
//! The crate has two halves:
//!
//! * [`analysis`] evaluates the closed-form performance expressions
//!   (achievable delivery time, per-user DoF, lower bound, gap, CSIT
//!   savings, delayed-feedback load), exactly in rationals wherever the
//!   inputs are rational.
//! * [`scheme`] and [`delivery`] execute the placement, folding and
//!   retrospective multi-phase delivery symbolically over a prime field,
//!   then check that every user recovers its file bit-exactly and that the
//!   simulated schedule length equals the closed-form delivery time.
//!
//! [`cli`] wires both into the `cachebc` binary.

pub mod analysis;
pub mod cli;
pub mod combinatorics;
pub mod delivery;
pub mod error;
pub mod field;
pub mod rational;
pub mod scheme;

pub use analysis::{DcsitLoad, PerformancePoint, SystemParams};
pub use combinatorics::{Harmonic, UserSet};
pub use delivery::{simulate, SimReport};
pub use error::{Error, Result};
pub use rational::Rational;
