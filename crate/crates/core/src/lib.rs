//! Separable one-to-one matching with transferable utility: equilibrium
//! computation, identification from observed matching patterns, comoment
//! estimation, exact local comparative statics, and a finite-population
//! assignment oracle for validation.

pub mod comparative;
pub mod equilibrium;
pub mod error;
pub mod fdcheck;
pub mod heterogeneity;
pub mod identification;
pub mod io;
pub mod market;
pub mod micro;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};
pub use heterogeneity::{HeterogeneitySpec, Side};
pub use market::{Matching, SurplusMatrix, ValidatedMarket};
