use std::fmt::Write;

use num_complex::Complex64 as C64;

use super::{Coefficients, GaugeDecl, ModelSpec};
use crate::gauge::FamilyKind;
use crate::operator::Mat;

/// Shortest form that round-trips: 17 significant digits.
fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn complex(z: C64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{}{sign}{}i", real(z.re), real(z.im.abs()))
}

fn matrix(m: &Mat) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| complex(m[(r, c)])).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn section(out: &mut String, name: &str, mut entries: Vec<(String, String)>) {
    entries.sort();
    if !out.is_empty() {
        out.push('\n');
    }
    let _ = writeln!(out, "[{name}]");
    for (k, v) in entries {
        let _ = writeln!(out, "{k} = {v}");
    }
}

/// Canonical text: fixed section order, keys sorted, every block written.
pub fn serialize(m: &ModelSpec) -> String {
    let mut out = String::new();
    section(&mut out, "model", vec![("d".into(), m.d.to_string()), ("N".into(), m.n.to_string())]);
    match &m.coefficients {
        Coefficients::Hamiltonian(e) | Coefficients::Ito(e) => {
            let (name, prefix) = if matches!(m.coefficients, Coefficients::Ito(_)) { ("ito", "G") } else { ("E", "E") };
            let mut entries = Vec::new();
            for a in 0..=m.n {
                for b in 0..=m.n {
                    entries.push((format!("{prefix}{a}{b}"), matrix(&e.block(a, b))));
                }
            }
            section(&mut out, name, entries);
        }
        Coefficients::Hp(p) => {
            let mut entries = vec![("H".to_string(), matrix(&p.h))];
            for i in 1..=m.n {
                entries.push((format!("L{i}"), matrix(&p.l_block(i))));
                for j in 1..=m.n {
                    entries.push((format!("W{i}{j}"), matrix(&p.w_block(i, j))));
                }
            }
            section(&mut out, "hp", entries);
        }
    }
    let z = match &m.gauge {
        GaugeDecl::Explicit(z) => matrix(z),
        GaugeDecl::FromNoise => "from-noise".into(),
    };
    section(&mut out, "gauge", vec![("Z".into(), z)]);
    if let Some(fam) = &m.noise {
        let mut entries = vec![("family".to_string(), fam.kind.name().to_string())];
        if fam.kind == FamilyKind::OuModulated {
            entries.push(("omega".into(), real(fam.omega)));
        }
        section(&mut out, "noise", entries);
    }
    if let Some(s) = &m.simulation {
        let list: Vec<String> = s.lambdas.iter().map(|&l| real(l)).collect();
        let mut entries = vec![
            ("t".to_string(), real(s.t)),
            ("lambda".to_string(), format!("[{}]", list.join(", "))),
            ("order".to_string(), s.order.to_string()),
        ];
        if let Some(seed) = s.seed {
            entries.push(("seed".into(), seed.to_string()));
        }
        for (prefix, tf) in [("f", &s.f), ("g", &s.g)] {
            for i in 1..=tf.channels() {
                let segs = tf.segments(i);
                if segs.is_empty() {
                    continue;
                }
                let rows: Vec<String> =
                    segs.iter().map(|g| format!("{}, {}, {}", real(g.start), real(g.end), complex(g.value))).collect();
                entries.push((format!("{prefix}{i}"), format!("[{}]", rows.join("; "))));
            }
        }
        section(&mut out, "simulation", entries);
    }
    if let Some(x) = &m.observable {
        section(&mut out, "observable", vec![("X".into(), matrix(x))]);
    }
    out
}
