use super::{Coefficients, GaugeDecl, ModelSpec};
use crate::gauge::GAUGE_HERMITICITY_TOL;
use crate::operator::{hermiticity_residual, spectral_norm};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationItem {
    pub name: &'static str,
    pub passed: bool,
    /// Measured residual or norm, when the check is quantitative.
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationItem> {
        self.items.iter().filter(|i| !i.passed)
    }

    fn push(&mut self, name: &'static str, measured: f64, threshold: f64, what: &str) {
        let passed = measured <= threshold;
        let message = if passed {
            format!("{what}: {measured:.3e} within {threshold:.1e}")
        } else {
            format!("{what}: {measured:.3e} exceeds {threshold:.1e}")
        };
        self.items.push(ValidationItem { name, passed, measured: Some(measured), threshold: Some(threshold), message });
    }

    fn fail(&mut self, name: &'static str, message: String) {
        self.items.push(ValidationItem { name, passed: false, measured: None, threshold: None, message });
    }
}

/// Preconditions of the conversion and limit theorems, as report items.
pub fn validate(m: &ModelSpec) -> ValidationReport {
    let mut r = ValidationReport::default();
    match &m.coefficients {
        Coefficients::Hamiltonian(e) => {
            let scale = 1.0 + e.op_norm();
            r.push("e-hermiticity", e.hermiticity_residual() / scale, 1e-10, "E − E† (relative)");
        }
        Coefficients::Hp(p) => {
            r.push("hp-unitarity-w", p.w_unitarity_residual(), 1e-10, "W†W − 1, WW† − 1");
            let h_scale = 1.0 + spectral_norm(&p.h);
            r.push("hp-hermiticity-h", p.h_hermiticity_residual() / h_scale, 1e-10, "H − H† (relative)");
        }
        Coefficients::Ito(_) => {}
    }
    let z_ok = match &m.gauge {
        GaugeDecl::Explicit(z) => {
            let res = hermiticity_residual(z) / (1.0 + spectral_norm(z));
            r.push("gauge-hermiticity", res, GAUGE_HERMITICITY_TOL, "Z − Z† (relative)");
            res <= GAUGE_HERMITICITY_TOL
        }
        GaugeDecl::FromNoise => true,
    };
    if !z_ok {
        return r;
    }
    let gauge = match m.gauge_spec() {
        Ok(g) => g,
        Err(e) => {
            r.fail("gauge", e.to_string());
            return r;
        }
    };
    let e = match &m.coefficients {
        Coefficients::Hamiltonian(e) => e.clone(),
        _ => match m.hamiltonian() {
            Ok(e) => e,
            Err(err) => {
                r.fail("conversion", err.to_string());
                return r;
            }
        },
    };
    let vc = crate::operator::kron_identity(&gauge.channel_v(), m.d);
    let norm = spectral_norm(&(vc * e.channel_block()));
    let passed = norm < 1.0;
    let message = format!("‖𝖵𝖤‖ = {norm:.6} ({})", if passed { "strict contraction" } else { "not a strict contraction" });
    r.items.push(ValidationItem { name: "contraction", passed, measured: Some(norm), threshold: Some(1.0), message });
    r
}
