use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info};
use num_complex::Complex64 as C64;
use qsc_core::conversion::{
    hamiltonian_strat, identity_residuals, ito_to_strat, optical_check, strat_to_ito, ConversionResult,
};
use qsc_core::diagrams::{
    count_pairings_emission_absorption, enumerate_vacuum_diagrams, prelimit_sum_at_vertices, pule_bound,
    tc_sum_at_vertices, vacuum_series_sum, xi_bound, MAX_ENUMERATION_VERTICES,
};
use qsc_core::ensemble::{random_matrix, rng};
use qsc_core::flow::{dissipation_residual, EhGenerator};
use qsc_core::gauge::gauge_from_kappa;
use qsc_core::modelspec::{parse_bytes, validate, Coefficients, ModelSpec, ParseOptions, SimulationPlan};
use qsc_core::operator::spectral_norm;
use qsc_core::quad::QuadraturePlan;
use qsc_core::unitarity::{hp_from_ito, ito_from_hp, unitarity_residuals};
use qsc_core::wong_zakai::{convergence_sweep, flow_unit_defect, reduced_flow, reduced_propagator, WzModel};
use qsc_core::{GaugeSpec, Mat, OperatorMatrix};
use serde_json::{json, Map, Value};

use crate::json::{complex, matrix, operator, real, validation, Residual};
use crate::{Cli, Command, DiagramMode, Direction, Failure, GaugeSource, Input, Outcome};

/// Tolerance on the exact algebraic identities checked by `convert` and `check`.
const IDENTITY_TOL: f64 = 1e-10;

pub fn run(cmd: &Command, input: Option<&Input>, cli: &Cli) -> Result<Outcome, Failure> {
    let loaded = input.map(|i| load(i, cli.lenient)).transpose()?;
    let warnings = loaded.as_ref().map(|l| l.1.clone()).unwrap_or_default();
    let model = loaded.map(|l| l.0);
    let mut out = match cmd {
        Command::Convert { direction, gauge, .. } => convert(&need(model)?, *direction, *gauge)?,
        Command::Check { .. } => check(&need(model)?, cli.seed)?,
        Command::Flow { dense, .. } => flow(&need(model)?, *dense)?,
        Command::Diagrams { n, mode, lambda, t, order, .. } => {
            diagrams(model.as_ref(), *n, *mode, *lambda, *t, *order, cli.seed)?
        }
        Command::Simulate { .. } => simulate(&need(model)?)?,
        Command::Sweep { csv, .. } => sweep(&need(model)?, csv.as_deref(), cli.seed)?,
    };
    out.warnings = warnings;
    Ok(out)
}

fn load(input: &Input, lenient: bool) -> Result<(ModelSpec, Vec<String>), Failure> {
    let parsed = parse_bytes(&input.bytes, ParseOptions { lenient })
        .map_err(|e| Failure::Parse(format!("{}:{e}", input.path.display())))?;
    let warnings = parsed.warnings.iter().map(|w| format!("{}:{w}", input.path.display())).collect();
    debug!("parsed {}: d={} N={}", input.path.display(), parsed.spec.d, parsed.spec.n);
    Ok((parsed.spec, warnings))
}

fn need(model: Option<ModelSpec>) -> Result<ModelSpec, Failure> {
    model.ok_or_else(|| Failure::Validation("this mode needs a model file".into()))
}

/// Runs validation; a failing report ends the run with exit code 1.
fn validated(m: &ModelSpec) -> Result<Value, Outcome> {
    let report = validate(m);
    let v = validation(&report);
    if report.passed() {
        return Ok(v);
    }
    let names: Vec<&str> = report.failures().map(|i| i.name).collect();
    Err(Outcome {
        results: json!({ "validation": v.clone() }),
        validation: Some(v),
        failure: Some(Failure::Validation(format!("model failed validation: {}", names.join(", ")))),
        ..Outcome::default()
    })
}

macro_rules! validated {
    ($m:expr) => {
        match validated($m) {
            Ok(v) => v,
            Err(o) => return Ok(o),
        }
    };
}

fn ito_of(m: &ModelSpec) -> Result<OperatorMatrix, Failure> {
    Ok(match &m.coefficients {
        Coefficients::Ito(g) => g.clone(),
        Coefficients::Hp(p) => ito_from_hp(p)?,
        Coefficients::Hamiltonian(e) => strat_to_ito(&hamiltonian_strat(e), &m.gauge_spec()?)?.g,
    })
}

fn strat_of(m: &ModelSpec) -> Result<OperatorMatrix, Failure> {
    Ok(match &m.coefficients {
        Coefficients::Hamiltonian(e) => hamiltonian_strat(e),
        _ => m.conversion()?.g0,
    })
}

fn select_gauge(m: &ModelSpec, source: GaugeSource) -> Result<GaugeSpec, Failure> {
    Ok(match source {
        GaugeSource::Model => m.gauge_spec()?,
        GaugeSource::Noise => gauge_from_kappa(&(Mat::identity(m.n, m.n) * m.family().kappa_exact()))?,
        GaugeSource::Symmetric => GaugeSpec::symmetric(m.n),
    })
}

fn identity_report(cr: &ConversionResult, out: &mut Vec<Residual>) {
    let r = identity_residuals(cr);
    out.push(Residual::gated("self_consistency", r.self_consistency, IDENTITY_TOL));
    out.push(Residual::gated("t_definition", r.t_definition, IDENTITY_TOL));
    out.push(Residual::gated("t_resolvent", r.t_resolvent, IDENTITY_TOL));
    out.push(Residual::gated("g_left", r.g_left, IDENTITY_TOL));
    out.push(Residual::gated("g_via_t", r.g_via_t, IDENTITY_TOL));
    out.push(Residual::gated("f_forms", r.f_forms, IDENTITY_TOL));
}

fn diagnostics(cr: &ConversionResult) -> Value {
    json!({ "rcond": real(cr.diagnostics.rcond), "contraction": real(cr.diagnostics.contraction) })
}

fn convert(m: &ModelSpec, direction: Direction, source: GaugeSource) -> Result<Outcome, Failure> {
    let v = validated!(m);
    let gauge = select_gauge(m, source)?;
    let mut residuals = Vec::new();
    let results = match direction {
        Direction::ToIto => {
            let cr = strat_to_ito(&strat_of(m)?, &gauge)?;
            if cr.diagnostics.contraction >= 1.0 {
                return Err(Failure::Validation(format!(
                    "‖𝖵𝖤‖ = {:.6} under the selected gauge is not a strict contraction",
                    cr.diagnostics.contraction
                )));
            }
            identity_report(&cr, &mut residuals);
            json!({
                "direction": "to-ito",
                "gauge_z": matrix(gauge.z()),
                "G": operator(&cr.g),
                "T": operator(&cr.t),
                "F": operator(&cr.f),
                "diagnostics": diagnostics(&cr),
            })
        }
        Direction::ToStrat => {
            let cr = ito_to_strat(&ito_of(m)?, &gauge)?;
            identity_report(&cr, &mut residuals);
            let e = cr.g0.scale(C64::new(0.0, 1.0));
            residuals.push(Residual::info("e_hermiticity", e.hermiticity_residual()));
            json!({
                "direction": "to-strat",
                "gauge_z": matrix(gauge.z()),
                "G0": operator(&cr.g0),
                "E": operator(&e),
                "diagnostics": diagnostics(&cr),
            })
        }
    };
    Ok(Outcome { results, residuals, validation: Some(v), ..Outcome::default() })
}

fn probe(m: &ModelSpec, seed: Option<u64>) -> (Mat, Option<u64>) {
    match &m.observable {
        Some(x) => (x.clone(), None),
        None => {
            let seed = seed.unwrap_or(0);
            (random_matrix(&mut rng(seed), m.d, m.d), Some(seed))
        }
    }
}

fn check(m: &ModelSpec, seed: Option<u64>) -> Result<Outcome, Failure> {
    let v = validated!(m);
    let cr = m.conversion()?;
    let e = m.hamiltonian()?;
    let mut residuals = Vec::new();
    identity_report(&cr, &mut residuals);

    let (iso, coiso) = unitarity_residuals(&cr.g);
    residuals.push(Residual::gated("isometry", iso, IDENTITY_TOL));
    residuals.push(Residual::gated("co_isometry", coiso, IDENTITY_TOL));
    let hp = hp_from_ito(&cr.g)?;
    residuals.push(Residual::gated("w_unitarity", hp.params.w_unitarity_residual(), IDENTITY_TOL));

    let o = optical_check(&cr);
    residuals.push(Residual::gated("optical_t_sum", o.t_sum_minus_ftilde / o.scale, IDENTITY_TOL));
    residuals.push(Residual::gated("optical_im_t", o.im_t_general, IDENTITY_TOL));
    // the Z = 0 forms, reported for comparison only
    residuals.push(Residual::info("optical_t_sum_symmetric", o.t_sum_minus_ffdag / o.scale));
    residuals.push(Residual::info("optical_normality_symmetric", o.ffdag_minus_fdagf / o.scale));
    residuals.push(Residual::info("optical_im_t_symmetric", o.im_t_plus_tet));

    let (x, probe_seed) = probe(m, seed);
    let y = x.adjoint();
    let direct = EhGenerator::direct(&cr.g);
    let sandwich = EhGenerator::sandwich(&e, &cr.f)?;
    let kappa = cr.gauge.channel_v()[(0, 0)];
    let explicit = if m.n == 1 { Some(EhGenerator::explicit_n1(&e, kappa)?) } else { None };
    let (mut three, mut diss) = (0.0f64, 0.0f64);
    let mut generators = Map::new();
    for a in 0..=m.n {
        for b in 0..=m.n {
            let l = direct.apply(a, b, &x)?;
            let scale = 1.0 + spectral_norm(&l);
            three = three.max(spectral_norm(&(&l - sandwich.apply(a, b, &x)?)) / scale);
            if let Some(ex) = &explicit {
                three = three.max(spectral_norm(&(&l - ex.apply(a, b, &x)?)) / scale);
            }
            let dscale = (1.0 + cr.g.op_norm()).powi(2) * (1.0 + spectral_norm(&x)) * (1.0 + spectral_norm(&y));
            diss = diss.max(dissipation_residual(&direct, a, b, &x, &y)? / dscale);
            generators.insert(format!("L{a}{b}"), matrix(&l));
        }
    }
    residuals.push(Residual::gated("eh_three_way", three, IDENTITY_TOL));
    residuals.push(Residual::gated("eh_dissipation", diss, IDENTITY_TOL));

    let results = json!({
        "style": m.coefficients.style(),
        "G": operator(&cr.g),
        "hp": {
            "W": matrix(&hp.params.w),
            "L": matrix(&hp.params.l),
            "H": matrix(&hp.params.h),
            "anti_hermitian_residue": real(hp.anti_hermitian_residue),
        },
        "optical": {
            "min_eig_re_t": real(o.min_eig_re_t),
            "anti_hermiticity": real(o.anti_hermiticity),
        },
        "flow": {
            "sources": if explicit.is_some() { json!(["direct", "sandwich", "explicit"]) } else { json!(["direct", "sandwich"]) },
            "probe": matrix(&x),
            "generators": generators,
        },
        "diagnostics": diagnostics(&cr),
    });
    Ok(Outcome { results, residuals, validation: Some(v), seed: probe_seed, ..Outcome::default() })
}

fn flow(m: &ModelSpec, dense: bool) -> Result<Outcome, Failure> {
    let v = validated!(m);
    let x = m
        .observable
        .clone()
        .ok_or_else(|| Failure::Validation("flow needs an [observable] section with X".into()))?;
    let cr = m.conversion()?;
    let gen = EhGenerator::direct(&cr.g);
    let mut blocks = Map::new();
    let mut supers = Map::new();
    for a in 0..=m.n {
        for b in 0..=m.n {
            blocks.insert(format!("{a}{b}"), matrix(&gen.apply(a, b, &x)?));
            if dense {
                supers.insert(format!("{a}{b}"), matrix(&gen.superoperator(a, b)?));
            }
        }
    }
    let mut results = json!({ "X": matrix(&x), "generators": blocks });
    if dense {
        results["superoperators"] = Value::Object(supers);
        results["vectorization"] = json!("column-stacked");
    }
    Ok(Outcome { results, validation: Some(v), ..Outcome::default() })
}

/// Bell number by the Bell triangle; `None` on u128 overflow.
fn bell(n: usize) -> Option<u128> {
    let mut row = vec![1u128];
    for _ in 1..n {
        let mut next = vec![*row.last()?];
        for v in &row {
            next.push(next.last()?.checked_add(*v)?);
        }
        row = next;
    }
    row.last().copied()
}

fn plan_for(seed: Option<u64>, sim: Option<&SimulationPlan>) -> QuadraturePlan {
    let mut plan = QuadraturePlan::default();
    if let Some(s) = seed.or(sim.and_then(|s| s.seed)) {
        plan.seed = s;
    }
    plan
}

fn diagrams(
    m: Option<&ModelSpec>,
    n: usize,
    mode: DiagramMode,
    lambda: f64,
    t: f64,
    order: usize,
    seed: Option<u64>,
) -> Result<Outcome, Failure> {
    if mode == DiagramMode::Count {
        let count = if n <= MAX_ENUMERATION_VERTICES {
            enumerate_vacuum_diagrams(n)?.len() as u128
        } else {
            bell(n).ok_or_else(|| Failure::Validation(format!("n = {n}: the diagram count overflows")))?
        };
        return Ok(Outcome { results: json!({ "n": n, "count": count }), ..Outcome::default() });
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Failure::Validation(format!("t = {t} must be finite and non-negative")));
    }
    let m = m.ok_or_else(|| Failure::Validation("this mode needs a model file".into()))?;
    let v = validated!(m);
    let e = m.hamiltonian()?;
    let gauge = m.gauge_spec()?;
    let vmat = gauge.v();
    let results = match mode {
        DiagramMode::Count => unreachable!(),
        DiagramMode::TcSum => {
            let value = tc_sum_at_vertices(&e, &vmat, t, n)?;
            let series = vacuum_series_sum(&e, &vmat, t, order)?;
            json!({
                "n": n,
                "t": real(t),
                "time_consecutive_count": if n == 0 { 1u128 } else { 1u128 << (n - 1) },
                "value": matrix(&value),
                "vacuum_series": {
                    "order": order,
                    "value": matrix(&series.value),
                    "box_operator": matrix(&series.box_operator),
                    "truncation_bound": real(series.truncation_bound),
                },
            })
        }
        DiagramMode::Prelimit => {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Failure::Validation(format!("lambda = {lambda} must be positive")));
            }
            let plan = plan_for(seed, m.simulation.as_ref());
            info!("pre-limit sum at n = {n}, λ = {lambda}, t = {t}");
            let (value, se) = prelimit_sum_at_vertices(&e, &m.family(), lambda, t, n, &plan)?;
            let limit = tc_sum_at_vertices(&e, &vmat, t, n)?;
            let results = json!({
                "n": n,
                "t": real(t),
                "lambda": real(lambda),
                "value": matrix(&value),
                "std_error": real(se),
                "limit": matrix(&limit),
                "err_abs": real(spectral_norm(&(&value - &limit))),
            });
            return Ok(Outcome { results, validation: Some(v), seed: Some(plan.seed), ..Outcome::default() });
        }
        DiagramMode::Bounds => {
            let n2 = n / 2;
            let e_max = e.max_block_norm();
            let c_max = m.family().kappa_exact().norm();
            let contraction = strat_to_ito(&hamiltonian_strat(&e), &gauge)?.diagnostics.contraction;
            let series = vacuum_series_sum(&e, &vmat, t, order)?;
            json!({
                "n": n,
                "t": real(t),
                "pairings": count_pairings_emission_absorption(n2)?,
                "pule": { "n2": n2, "e_max": real(e_max), "c_max": real(c_max), "bound": real(pule_bound(e_max, c_max, t, n2)) },
                "xi": {
                    "a": real(contraction),
                    "b": real(e_max * t.max(1.0)),
                    "bound": real(xi_bound(contraction, e_max * t.max(1.0))?),
                },
                "vacuum_truncation_bound": { "order": order, "bound": real(series.truncation_bound) },
            })
        }
    };
    Ok(Outcome { results, validation: Some(v), ..Outcome::default() })
}

fn simulation(m: &ModelSpec) -> Result<&SimulationPlan, Failure> {
    m.simulation.as_ref().ok_or_else(|| Failure::Validation("model has no [simulation] section".into()))
}

fn simulate(m: &ModelSpec) -> Result<Outcome, Failure> {
    let v = validated!(m);
    let sim = simulation(m)?;
    let cr = m.conversion()?;
    let prop = reduced_propagator(&cr.g, &sim.f, &sim.g, sim.t)?;
    let defect = flow_unit_defect(&cr.g, &sim.f, sim.t)?;
    let mut residuals = vec![Residual::gated("flow_unit_defect", defect, 1e-8)];
    residuals.push(Residual::info("ode_richardson_difference", prop.stats.max_relative_diff));
    let mut results = json!({
        "t": real(sim.t),
        "K": matrix(&prop.k),
        "overlap": complex(prop.overlap),
        "element": matrix(&prop.full()),
        "ode_steps": prop.stats.steps,
    });
    if let Some(x) = &m.observable {
        let (s, _) = reduced_flow(&cr.g, &sim.f, &sim.g, sim.t)?;
        let d = m.d;
        let vec_x = Mat::from_iterator(d * d, 1, x.iter().copied());
        let image = s * vec_x;
        results["observable"] = json!({
            "X": matrix(x),
            "flow": matrix(&Mat::from_iterator(d, d, image.iter().copied())),
        });
    }
    Ok(Outcome { results, residuals, validation: Some(v), ..Outcome::default() })
}

fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn csv_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        String::new()
    }
}

fn sweep(m: &ModelSpec, csv: Option<&Path>, seed: Option<u64>) -> Result<Outcome, Failure> {
    let v = validated!(m);
    let sim = simulation(m)?;
    let wz = WzModel::with_gauge(m.hamiltonian()?, m.family(), m.gauge_spec()?)?;
    let plan = plan_for(seed, Some(sim));
    info!("sweep over {} values of λ at order {}", sim.lambdas.len(), sim.order);
    let table = convergence_sweep(&wz, sim.t, &sim.lambdas, sim.order, &plan)?;
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "lambda": real(r.lambda),
                "order": r.order,
                "err_abs": real(r.err_abs),
                "err_rel": real(r.err_rel),
                "std_error": real(r.std_error),
                "failure": r.failure,
            })
        })
        .collect();
    let fit = table.fit_rate.map_or(Value::Null, real);
    let results = json!({
        "t": real(sim.t),
        "order": sim.order,
        "gauge_z": matrix(wz.gauge().z()),
        "family": m.family().kind.name(),
        "rows": rows,
        "monotone": table.monotone,
        "fit_rate": fit,
        "limit": matrix(&table.limit),
    });
    if let Some(path) = csv {
        let mut text = String::from("lambda,order,err_abs,err_rel,fit_rate\n");
        let rate = table.fit_rate.map_or(String::new(), csv_real);
        for r in &table.rows {
            let _ = writeln!(text, "{},{},{},{},{rate}", csv_real(r.lambda), r.order, csv_real(r.err_abs), csv_real(r.err_rel));
        }
        crate::write_file(&path.to_path_buf(), &text)?;
        let side = json!({
            "schema_version": crate::SCHEMA_VERSION,
            "csv": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "limit": matrix(&table.limit),
            "rows": results["rows"].clone(),
        });
        crate::write_file(&sidecar_path(path), &(serde_json::to_string_pretty(&side).expect("serializes") + "\n"))?;
    }
    let failed: Vec<String> =
        table.rows.iter().filter_map(|r| r.failure.as_ref().map(|f| format!("λ = {}: {f}", r.lambda))).collect();
    let failure = (!failed.is_empty()).then(|| Failure::Numerical(failed.join("; ")));
    Ok(Outcome { results, validation: Some(v), seed: Some(plan.seed), failure, ..Outcome::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_triangle_matches_enumeration() {
        for n in 0..=8 {
            assert_eq!(bell(n), Some(enumerate_vacuum_diagrams(n).unwrap().len() as u128));
        }
        assert_eq!(bell(15), Some(1_382_958_545));
        assert_eq!(bell(200), None);
    }
}
