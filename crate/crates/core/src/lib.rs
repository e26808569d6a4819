//! Quantum Stratonovich calculus for quantum stochastic differential equations.
//!
//! The crate converts between Itô and Stratonovich coefficient matrices under a
//! gauge V = ½P + iZ, checks unitarity and flow-generator identities, and
//! evaluates the Dyson series of a colored-noise model diagram by diagram to
//! exhibit its white-noise (Wong–Zakai) limit.

pub mod conversion;
pub mod diagrams;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod gauge;
pub mod modelspec;
pub mod operator;
pub mod quad;
pub mod unitarity;
pub mod wong_zakai;

pub use error::{Error, Result};
pub use gauge::{CorrelationFamily, FamilyKind, GaugeSpec};
pub use operator::{Mat, OperatorMatrix, Proj, ScalarMatrix};
