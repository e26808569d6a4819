//! JSON encodings shared by every subcommand.
//!
//! Complex numbers are `[re, im]`; matrices are row-major nested arrays of
//! complex numbers. Non-finite reals become `null`.

use num_complex::Complex64 as C64;
use qsc_core::modelspec::{ValidationItem, ValidationReport};
use qsc_core::{Mat, OperatorMatrix};
use serde_json::{json, Map, Value};

pub fn real(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn complex(z: C64) -> Value {
    Value::Array(vec![real(z.re), real(z.im)])
}

pub fn matrix(m: &Mat) -> Value {
    Value::Array((0..m.nrows()).map(|r| Value::Array((0..m.ncols()).map(|c| complex(m[(r, c)])).collect())).collect())
}

/// Blocks keyed "αβ" in row-major order.
pub fn operator(m: &OperatorMatrix) -> Value {
    let mut blocks = Map::new();
    for a in 0..=m.channels() {
        for b in 0..=m.channels() {
            blocks.insert(format!("{a}{b}"), matrix(&m.block(a, b)));
        }
    }
    json!({ "channels": m.channels(), "dim": m.dim(), "blocks": blocks })
}

fn item(i: &ValidationItem) -> Value {
    json!({
        "name": i.name,
        "passed": i.passed,
        "measured": i.measured.map_or(Value::Null, real),
        "threshold": i.threshold.map_or(Value::Null, real),
        "message": i.message,
    })
}

pub fn validation(r: &ValidationReport) -> Value {
    json!({ "passed": r.passed(), "items": r.items.iter().map(item).collect::<Vec<_>>() })
}

/// A named residual checked against a tolerance.
pub struct Residual {
    pub name: String,
    pub value: f64,
    pub tolerance: Option<f64>,
}

impl Residual {
    pub fn gated(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Residual { name: name.into(), value, tolerance: Some(tolerance) }
    }

    pub fn info(name: impl Into<String>, value: f64) -> Self {
        Residual { name: name.into(), value, tolerance: None }
    }

    pub fn passed(&self) -> bool {
        self.tolerance.is_none_or(|t| self.value <= t)
    }
}

pub fn residuals(rs: &[Residual]) -> Value {
    let mut out = Map::new();
    for r in rs {
        out.insert(
            r.name.clone(),
            json!({
                "value": real(r.value),
                "tolerance": r.tolerance.map_or(Value::Null, real),
                "passed": r.passed(),
            }),
        );
    }
    Value::Object(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings() {
        let m = Mat::from_row_slice(1, 2, &[C64::new(1.0, -0.5), C64::new(f64::NAN, 0.0)]);
        assert_eq!(matrix(&m).to_string(), "[[[1.0,-0.5],[null,0.0]]]");
        let op = OperatorMatrix::identity(1, 1);
        let v = operator(&op);
        let keys: Vec<&String> = v["blocks"].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["00", "01", "10", "11"]);
    }
}
