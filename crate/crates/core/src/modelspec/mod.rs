//! `.qsc` model description files.
//!
//! ```text
//! [model]
//! d = 2
//! N = 1
//! [E]
//! E00 = [1+0i, 0; 0, -1+0i]
//! E01 = [0.3, 0; 0, 0.3]
//! E10 = [0.3, 0; 0, 0.3]
//! [noise]
//! family = ou
//! ```
//!
//! Sections: `[model]` (d, N), exactly one of `[E]` (E{a}{b}), `[hp]` (W{i}{j},
//! L{i}, H) or `[ito]` (G{a}{b}), then optional `[gauge]` (Z = matrix or
//! `from-noise`), `[noise]` (family, omega), `[simulation]` (t, lambda, order,
//! seed, f{i}, g{i}) and `[observable]` (X).

use std::fmt;

use num_complex::Complex64 as C64;

use crate::conversion::{hamiltonian_strat, ito_to_strat, strat_to_ito, ConversionResult};
use crate::error::Result as CoreResult;
use crate::gauge::{gauge_from_kappa, CorrelationFamily, GaugeSpec};
use crate::operator::{Mat, OperatorMatrix};
use crate::unitarity::{ito_from_hp, HpParams};
use crate::wong_zakai::TestFunction;

mod lexer;
mod parser;
mod serialize;
mod validate;

pub use parser::{parse, parse_bytes, parse_with, ParseOptions, Parsed};
pub use serialize::serialize;
pub use validate::{validate, ValidationItem, ValidationReport};

/// Largest accepted initial-space dimension.
pub const MAX_DIM: usize = 32;
/// Largest accepted channel count (indices are single digits).
pub const MAX_CHANNELS: usize = 9;
/// Tolerance of the Hermiticity and unitarity declarations checked on parse.
pub const DECLARATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseErrorKind {
    Encoding,
    Lexical,
    Syntax,
    UnknownKey,
    MissingKey,
    DimensionMismatch,
    InvariantViolation,
}

impl ParseErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ParseErrorKind::Encoding => "encoding error",
            ParseErrorKind::Lexical => "lexical error",
            ParseErrorKind::Syntax => "syntax error",
            ParseErrorKind::UnknownKey => "unknown key",
            ParseErrorKind::MissingKey => "missing key",
            ParseErrorKind::DimensionMismatch => "dimension mismatch",
            ParseErrorKind::InvariantViolation => "invariant violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{pos}: {}: {message}", kind.name())]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub pos: Pos,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(kind: ParseErrorKind, pos: Pos, message: impl Into<String>) -> Self {
        ParseError { kind, pos, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    /// Hermitian family E; the Stratonovich matrix is −iE.
    Hamiltonian(OperatorMatrix),
    Hp(HpParams),
    Ito(OperatorMatrix),
}

impl Coefficients {
    pub fn style(&self) -> &'static str {
        match self {
            Coefficients::Hamiltonian(_) => "E",
            Coefficients::Hp(_) => "hp",
            Coefficients::Ito(_) => "ito",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GaugeDecl {
    /// Raw Z as written; Hermiticity is a validation item.
    Explicit(Mat),
    FromNoise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub t: f64,
    pub lambdas: Vec<f64>,
    pub order: usize,
    pub seed: Option<u64>,
    pub f: TestFunction,
    pub g: TestFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub d: usize,
    pub n: usize,
    pub coefficients: Coefficients,
    pub gauge: GaugeDecl,
    pub noise: Option<CorrelationFamily>,
    pub simulation: Option<SimulationPlan>,
    pub observable: Option<Mat>,
}

impl ModelSpec {
    /// The gauge in force: explicit Z, or κ of the declared noise family.
    pub fn gauge_spec(&self) -> CoreResult<GaugeSpec> {
        match &self.gauge {
            GaugeDecl::Explicit(z) => GaugeSpec::new(z.clone()),
            GaugeDecl::FromNoise => {
                let fam = self.noise.ok_or_else(|| {
                    crate::Error::InvalidArgument("gauge from-noise needs a [noise] section".into())
                })?;
                gauge_from_kappa(&(Mat::identity(self.n, self.n) * fam.kappa_exact()))
            }
        }
    }

    /// Noise family, defaulting to OU.
    pub fn family(&self) -> CorrelationFamily {
        self.noise.unwrap_or_else(CorrelationFamily::ou)
    }

    /// Both coefficient matrices under the model gauge.
    pub fn conversion(&self) -> CoreResult<ConversionResult> {
        let gauge = self.gauge_spec()?;
        match &self.coefficients {
            Coefficients::Hamiltonian(e) => strat_to_ito(&hamiltonian_strat(e), &gauge),
            Coefficients::Hp(p) => ito_to_strat(&ito_from_hp(p)?, &gauge),
            Coefficients::Ito(g) => ito_to_strat(g, &gauge),
        }
    }

    /// The Hermitian family E = iG₀ (as declared for E-style models).
    pub fn hamiltonian(&self) -> CoreResult<OperatorMatrix> {
        match &self.coefficients {
            Coefficients::Hamiltonian(e) => Ok(e.clone()),
            _ => Ok(self.conversion()?.g0.scale(C64::new(0.0, 1.0))),
        }
    }
}
