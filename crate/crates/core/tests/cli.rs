//! End-to-end runs of the `jpo` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jpo_noise::cli::sha256_hex;
use jpo_noise::config::RunConfig;
use jpo_noise::io::{read_trace, s11_csv};
use jpo_noise::model::reflection_at;
use num_complex::Complex64;
use serde_json::Value;

fn jpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jpo"))
        .args(args)
        .env_remove("JPO_NOISE_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.acquisition.duration = 1.0;
    c.acquisition.sample_rate = 50e3;
    c.acquisition.repeats = 1;
    c.pump.powers_dbm = vec![-64.0, -60.0, -56.0];
    c.welch.segment_length = 1 << 14;
    c.plane.detuning_steps = 21;
    c.plane.power_steps = 11;
    c
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml_string()).unwrap();
    p
}

fn load_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Every manifest entry exists with the recorded size and hash, and every
/// SVG has its CSV twin.
fn check_manifest(dir: &Path) -> Value {
    let m = load_json(&dir.join("manifest.json"));
    let files = m["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["file"].as_str().unwrap()).collect();
    for f in files {
        let bytes = std::fs::read(dir.join(f["file"].as_str().unwrap())).unwrap();
        assert_eq!(bytes.len() as u64, f["bytes"].as_u64().unwrap());
        assert_eq!(sha256_hex(&bytes), f["sha256"].as_str().unwrap());
    }
    for n in &names {
        if let Some(stem) = n.strip_suffix(".svg") {
            assert!(names.contains(&format!("{stem}.csv").as_str()), "{n} has no CSV twin");
        }
    }
    m
}

#[test]
fn version_subcommand() {
    let o = jpo(&["version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn simulate_then_analyze_writes_a_complete_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config());
    let sim = tmp.path().join("sim");
    let ana = tmp.path().join("ana");

    let o = jpo(&["--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = check_manifest(&sim);
    let traces: Vec<&str> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["file"].as_str().unwrap())
        .filter(|n| n.ends_with(".jpot"))
        .collect();
    assert_eq!(traces.len(), 3);
    assert!(traces.iter().any(|n| n.starts_with("trace_-64.00dBm_r0_s")));

    let o = jpo(&["--config", cfg.to_str().unwrap(), "--out", ana.to_str().unwrap(), "analyze", sim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(&ana);
    for f in ["sweep.csv", "summary.json", "rates.svg", "plane.svg", "trace_excerpt.svg", "spectra_-60.00dBm.csv"] {
        assert!(ana.join(f).exists(), "{f} missing");
    }
    let sweep = std::fs::read_to_string(ana.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("pump_power_dbm,gamma_r_hz,gamma_r_err,f_w_hz,f_w_err,switch_count,method"));
    assert_eq!(sweep.lines().count(), 4);
    let spectra = std::fs::read_to_string(ana.join("spectra_-60.00dBm.csv")).unwrap();
    assert!(spectra.starts_with("frequency_hz,s_aa,s_bb,angle_rad"));
}

#[test]
fn seed_override_changes_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.pump.powers_dbm = vec![-60.0];
    let cfg = write_config(tmp.path(), &c);
    let run = |seed: &str, out: &str| {
        let dir = tmp.path().join(out);
        let o = jpo(&["--config", cfg.to_str().unwrap(), "--seed", seed, "--out", dir.to_str().unwrap(), "simulate"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let f = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.extension().is_some_and(|e| e == "jpot"))
            .unwrap();
        read_trace(f).unwrap()
    };
    let (a, b) = (run("1", "a"), run("2", "b"));
    assert_eq!(a.metadata.seed, jpo_noise::simulate::derive_seed(1, 0));
    assert_ne!(a.i_samples, b.i_samples);
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &small_config());
    let dir = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_jpo"))
        .args(["--config", cfg.to_str().unwrap(), "plane"])
        .env("JPO_NOISE_OUT", &dir)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("plane.svg").exists());
    assert!(dir.join("plane_region.csv").exists());
    check_manifest(&dir);
}

#[test]
fn below_threshold_trace_is_not_applicable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.pump.powers_dbm = vec![-76.0];
    let cfg = write_config(tmp.path(), &c);
    let sim = tmp.path().join("sim");
    let ana = tmp.path().join("ana");
    assert!(jpo(&["--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap(), "simulate"]).status.success());
    let o = jpo(&["--config", cfg.to_str().unwrap(), "--out", ana.to_str().unwrap(), "analyze", sim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(ana.join("spectra_-76.00dBm.csv").exists());
    assert!(ana.join("psd_-76.00dBm.svg").exists());
    let s = load_json(&ana.join("summary.json"));
    assert_eq!(s["points"][0]["applicable"], Value::Bool(false));
    assert_eq!(s["points"][0]["method"], "none");
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = jpo(&["--out", out.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--config"));

    let mut c = small_config();
    c.acquisition.duration = 0.0;
    let text = c.to_toml_string();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, text).unwrap();
    let o = jpo(&["--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("acquisition.duration"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), &small_config());
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = jpo(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "analyze", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = jpo(&["--config", cfg.to_str().unwrap(), "--threads", "0", "version"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_input_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let o = jpo(&[
        "--out",
        tmp.path().join("o").to_str().unwrap(),
        "decimate",
        tmp.path().join("nope.jpot").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn corrupt_trace_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jpot");
    std::fs::write(&bad, b"NOPE0000").unwrap();
    let cfg = write_config(tmp.path(), &small_config());
    let o = jpo(&["--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap(), "analyze", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("magic"));
}

fn s11_file(dir: &Path, resonance: bool) -> PathBuf {
    let (fr, ke, ki) = (5.94e9, 11e6, 0.3e6);
    let freqs: Vec<f64> = (0..601).map(|k| fr - 60e6 + 0.2e6 * k as f64).collect();
    let s: Vec<Complex64> = freqs
        .iter()
        .map(|&f| if resonance { reflection_at(fr, ke, ki, f) } else { Complex64::new(1.0, 0.0) })
        .collect();
    let p = dir.join(if resonance { "s11.csv" } else { "flat.csv" });
    std::fs::write(&p, s11_csv(&freqs, &s)).unwrap();
    p
}

#[test]
fn fit_s11_recovers_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = s11_file(tmp.path(), true);
    let out = tmp.path().join("fit");
    let o = jpo(&["--out", out.to_str().unwrap(), "fit-s11", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(&out);
    let fit = load_json(&out.join("s11_fit.json"));
    let rel = |key: &str, want: f64| (fit[key].as_f64().unwrap() / want - 1.0).abs();
    assert!(rel("resonance", 5.94e9) < 0.02);
    assert!(rel("kappa_ext", 11e6) < 0.02);
    assert!(rel("kappa_int", 0.3e6) < 0.02);
    assert!(out.join("s11_overlay.svg").exists() && out.join("s11_overlay.csv").exists());
}

#[test]
fn fit_s11_flat_response_is_a_fit_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = s11_file(tmp.path(), false);
    let o = jpo(&["--out", tmp.path().join("fit").to_str().unwrap(), "fit-s11", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn fit_s11_malformed_row_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bad.csv");
    std::fs::write(&csv, "frequency_hz,re,im\n5.9e9,1,0\n5.91e9,abc,0\n").unwrap();
    let o = jpo(&["--out", tmp.path().join("fit").to_str().unwrap(), "fit-s11", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn decimate_simulated_digitizer_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.pump.powers_dbm = vec![-60.0];
    c.acquisition.sample_rate = 500e6;
    c.acquisition.duration = 2e-3;
    c.welch.segment_length = 1 << 12;
    let cfg = write_config(tmp.path(), &c);
    let sim = tmp.path().join("sim");
    assert!(jpo(&["--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap(), "simulate"]).status.success());
    let input = std::fs::read_dir(&sim)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "jpot"))
        .unwrap();
    let out = tmp.path().join("dec");
    let o = jpo(&["--out", out.to_str().unwrap(), "decimate", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    check_manifest(&out);
    let stem = input.file_stem().unwrap().to_str().unwrap();
    let dec = read_trace(out.join(format!("{stem}_dec500.jpot"))).unwrap();
    assert_eq!(dec.sample_rate, 1e6);
    assert_eq!(dec.len(), 2000);
    assert_eq!(dec.metadata.decimation_history, vec![5, 4, 25]);
}
