//! `qsc`: batch front end for qsc-core.

mod commands;
mod json;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::json::Residual;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "qsc", version, about = "Quantum Stratonovich calculus toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write the full JSON run report to this path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for randomized quadrature and probe matrices; overrides the model file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Report unknown sections and keys as warnings instead of errors.
    #[arg(long, global = true)]
    lenient: bool,

    /// Include wall-clock timing in the report (makes it non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert between Stratonovich and Itô coefficient matrices.
    Convert {
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = Direction::ToIto)]
        direction: Direction,
        #[arg(long, value_enum, default_value_t = GaugeSource::Model)]
        gauge: GaugeSource,
    },
    /// Unitarity, optical and flow-generator consistency report.
    Check { spec: PathBuf },
    /// Evans–Hudson generators applied to the model observable.
    Flow {
        spec: PathBuf,
        /// Also emit the dense d²×d² superoperator of every pair.
        #[arg(long)]
        dense: bool,
    },
    /// Diagram counts, sums and bounds.
    Diagrams {
        /// Model file; not needed for `--mode count`.
        spec: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = DiagramMode::Count)]
        mode: DiagramMode,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 4)]
        order: usize,
    },
    /// Reduced propagator between exponential vectors of the model test functions.
    Simulate { spec: PathBuf },
    /// Pre-limit against limit over the model λ grid.
    Sweep {
        spec: PathBuf,
        /// Write the table as CSV; matrix results go to a side-car JSON next to it.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToIto,
    ToStrat,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaugeSource {
    /// The gauge declared in the model file.
    Model,
    /// Z from the κ of the declared noise family.
    Noise,
    /// Z = 0.
    Symmetric,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagramMode {
    Count,
    TcSum,
    Prelimit,
    Bounds,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Convert { .. } => "convert",
            Command::Check { .. } => "check",
            Command::Flow { .. } => "flow",
            Command::Diagrams { .. } => "diagrams",
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
        }
    }

    fn spec(&self) -> Option<&PathBuf> {
        match self {
            Command::Convert { spec, .. }
            | Command::Check { spec }
            | Command::Flow { spec, .. }
            | Command::Simulate { spec }
            | Command::Sweep { spec, .. } => Some(spec),
            Command::Diagrams { spec, .. } => spec.as_ref(),
        }
    }
}

/// Why a run stopped early; maps onto the exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Numerical(String),
    Parse(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) | Failure::Io(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Parse(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numerical(m) | Failure::Parse(m) | Failure::Io(m) => m,
        }
    }
}

impl From<qsc_core::Error> for Failure {
    fn from(e: qsc_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

/// What a subcommand hands back for the report.
#[derive(Default)]
pub struct Outcome {
    pub results: Value,
    pub residuals: Vec<Residual>,
    pub validation: Option<Value>,
    pub warnings: Vec<String>,
    pub seed: Option<u64>,
    /// Set when results were produced but the run must still fail.
    pub failure: Option<Failure>,
}

pub struct Input {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

fn digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QSC_LOG", "warn")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    let name = cli.command.name();

    let input = match cli.command.spec() {
        Some(path) => match std::fs::read(path) {
            Ok(bytes) => Some(Input { path: path.clone(), bytes }),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(1);
            }
        },
        None => None,
    };

    let outcome = commands::run(&cli.command, input.as_ref(), &cli);
    let mut printed = false;
    let mut outcome = match outcome {
        Ok(o) => o,
        Err(f) => {
            eprintln!("{}", f.message());
            printed = true;
            Outcome { results: Value::Null, failure: Some(f), ..Outcome::default() }
        }
    };
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let gate: Vec<&Residual> = outcome.residuals.iter().filter(|r| !r.passed()).collect();
    if outcome.failure.is_none() && !gate.is_empty() {
        let names: Vec<&str> = gate.iter().map(|r| r.name.as_str()).collect();
        outcome.failure = Some(Failure::Validation(format!("residuals above tolerance: {}", names.join(", "))));
    }

    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "tool": "qsc",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": name,
        "input_digest": input.as_ref().map_or(Value::Null, |i| Value::String(digest(&i.bytes))),
        "seed": outcome.seed.map_or(Value::Null, |s| json!(s)),
        "status": match &outcome.failure {
            None => json!({ "exit_code": 0 }),
            Some(f) => json!({ "exit_code": f.code(), "message": f.message() }),
        },
        "results": outcome.results,
        "residuals": json::residuals(&outcome.residuals),
    });
    if let Some(v) = outcome.validation.take() {
        report["validation"] = v;
    }
    if !outcome.warnings.is_empty() {
        report["warnings"] = json!(outcome.warnings);
    }
    if cli.timing {
        report["timing"] = json!({ "seconds": start.elapsed().as_secs_f64() });
    }

    if !report["results"].is_null() {
        println!("{}", report["results"]);
    }
    if let Some(out) = &cli.out {
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        if let Err(f) = write_file(out, &text) {
            eprintln!("{}", f.message());
            return ExitCode::from(f.code());
        }
    }
    match outcome.failure {
        None => ExitCode::SUCCESS,
        Some(f) => {
            if !printed {
                eprintln!("{}", f.message());
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        let num: Failure = qsc_core::Error::Quadrature("no convergence".into()).into();
        assert_eq!(num.code(), 2);
        let bad: Failure = qsc_core::Error::ContractionViolated { norm: 1.5 }.into();
        assert_eq!(bad.code(), 1);
        assert_eq!(Failure::Parse(String::new()).code(), 3);
    }

    #[test]
    fn digest_is_sha256() {
        assert_eq!(digest(b""), "sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
