//! Risk-constrained nonconvex functional resource allocation.
//!
//! The crate formulates problems of the form
//!
//! ```text
//! maximize    g⁰(x)
//! subject to  x ≤ −ρ(−f(p(H), H)),   g(x) ≥ 0,   (x, p) ∈ X × Π
//! ```
//!
//! over a finite scenario model of the channel `H`, evaluates the risk
//! measures `ρ` through their envelopes, solves the Lagrangian dual by
//! projected subgradient descent, recovers primal policies by time-sharing,
//! and measures the duality gap as the scenario model is refined.

// `!(a > b)` is used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certify;
pub mod cli;
pub mod dual;
pub mod error;
pub mod generate;
pub mod mixing;
pub mod model;
pub mod probability;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
pub use probability::{RandomVariable, ScenarioSet};
pub use risk::{Direction, RiskSpec, RiskVector};
