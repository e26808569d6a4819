use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsc")).args(args).env_remove("QSC_LOG").output().expect("qsc runs")
}

fn example(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name).display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn diagram_count_output() {
    let o = qsc(&["diagrams", "--n", "8", "--mode", "count"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "{\"n\":8,\"count\":4140}\n");
}

#[test]
fn check_diffusion_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("check.json");
    let o = qsc(&["check", &example("diffusion.qsc"), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["subcommand"], "check");
    assert!(r["input_digest"].as_str().unwrap().starts_with("sha256:"));
    assert!(r.get("timing").is_none());
    let mut gated = 0;
    for (name, v) in r["residuals"].as_object().unwrap() {
        if let Some(tol) = v["tolerance"].as_f64() {
            gated += 1;
            assert!(tol <= 1e-10, "{name}");
            assert!(v["value"].as_f64().unwrap() <= 1e-10, "{name}: {}", v["value"]);
        }
    }
    assert!(gated >= 10);
    assert_eq!(r["results"]["flow"]["sources"].as_array().unwrap().len(), 3);
}

#[test]
fn every_example_runs() {
    for name in ["diffusion.qsc", "counting.qsc", "scattering-chain.qsc"] {
        for cmd in ["check", "convert", "simulate", "sweep"] {
            let o = qsc(&[cmd, &example(name)]);
            assert_eq!(code(&o), 0, "{cmd} {name}: {}", String::from_utf8_lossy(&o.stderr));
            let _: Value = serde_json::from_slice(&o.stdout).unwrap();
        }
        for mode in ["tc-sum", "prelimit", "bounds"] {
            let o = qsc(&["diagrams", &example(name), "--n", "3", "--mode", mode]);
            assert_eq!(code(&o), 0, "{mode} {name}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let o = qsc(&["flow", &example("diffusion.qsc"), "--dense"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["generators"].as_object().unwrap().len(), 4);
    assert_eq!(v["superoperators"]["01"].as_array().unwrap().len(), 4);
}

#[test]
fn convert_round_trips_through_stratonovich() {
    let o = qsc(&["convert", &example("scattering-chain.qsc"), "--direction", "to-ito"]);
    let ito: Value = serde_json::from_slice(&o.stdout).unwrap();
    let o = qsc(&["convert", &example("scattering-chain.qsc"), "--direction", "to-strat"]);
    assert_eq!(code(&o), 0);
    let strat: Value = serde_json::from_slice(&o.stdout).unwrap();
    // the declared E is recovered from the model's own Itô matrix
    let e01 = &strat["E"]["blocks"]["12"][0][0];
    assert!((e01[0].as_f64().unwrap() - 0.1).abs() < 1e-12 && e01[1].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(ito["direction"], "to-ito");
    let o = qsc(&["convert", &example("scattering-chain.qsc"), "--gauge", "symmetric"]);
    let sym: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_ne!(sym["G"], ito["G"]);
}

#[test]
fn non_contractive_model_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "bad.qsc", "[model] d=1 N=1\n[E]\nE11 = [2.4]\n[gauge]\nZ = [0]\n");
    let out = dir.path().join("r.json");
    let o = qsc(&["convert", &spec, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let r = report(&out);
    assert_eq!(r["status"]["exit_code"], 1);
    let items = r["validation"]["items"].as_array().unwrap();
    let item = items.iter().find(|i| i["name"] == "contraction").unwrap();
    assert_eq!(item["passed"], false);
    assert!((item["measured"].as_f64().unwrap() - 1.2).abs() < 1e-12);
}

#[test]
fn parse_errors_exit_three_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "p.qsc", "[model] d=2 N=1\n[E]\nE00 = [1, 0;\n       0]\n");
    let o = qsc(&["check", &spec]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("p.qsc:4:8: syntax error"), "{err}");
    assert!(o.stdout.is_empty());
}

#[test]
fn lenient_mode_downgrades_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "u.qsc", "[model] d=1 N=1\n[E]\nE11 = [0.4]\ncolour = [1]\n");
    assert_eq!(code(&qsc(&["check", &spec])), 3);
    let out = dir.path().join("r.json");
    let o = qsc(&["check", &spec, "--lenient", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r = report(&out);
    assert!(r["warnings"][0].as_str().unwrap().contains("4:1"));
}

#[test]
fn missing_simulation_section_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "s.qsc", "[model] d=1 N=1\n[E]\nE11 = [0.4]\n");
    let o = qsc(&["simulate", &spec]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("[simulation]"));
}

#[test]
fn sweep_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let o = qsc(&["sweep", &example("diffusion.qsc"), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "lambda,order,err_abs,err_rel,fit_rate");
    assert_eq!(lines.len(), 5);
    let errs: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    let side = report(&dir.path().join("sweep.csv.json"));
    assert_eq!(side["rows"].as_array().unwrap().len(), 4);
    assert_eq!(side["limit"].as_array().unwrap().len(), 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (i, args) in [
        vec!["sweep", "scattering-chain.qsc"],
        vec!["check", "diffusion.qsc"],
        vec!["diagrams", "diffusion.qsc", "--n", "5", "--mode", "prelimit", "--lambda", "0.2"],
    ]
    .into_iter()
    .enumerate()
    {
        let spec = example(args[1]);
        let mut runs = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{i}-{k}.json"));
            let mut full: Vec<&str> = vec![args[0], &spec];
            full.extend(&args[2..]);
            full.extend(["--seed", "11", "--out", out.to_str().unwrap()]);
            let o = qsc(&full);
            assert_eq!(code(&o), 0, "{args:?}");
            runs.push((o.stdout, std::fs::read(&out).unwrap()));
        }
        assert_eq!(runs[0], runs[1], "{args:?}");
        let r: Value = serde_json::from_slice(&runs[0].1).unwrap();
        if args[0] != "check" || r["seed"] != Value::Null {
            assert_eq!(r["seed"], 11);
        }
    }
}
