use std::path::PathBuf;
use std::process::Command as Process;

use clap::Parser;
use serde_json::Value;

use bellbench_cli::commands::{self, Cli, Command};
use bellbench_cli::error::{CliError, EXIT_IO, EXIT_VALIDATION};
use bellbench_core::apparatus::{coincidence_mean, ApparatusConfig};
use bellbench_core::io::{load_counts, load_result, AnalysisResult, ConfigFile};
use bellbench_core::{deg, PumpSource};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn parse(args: &[&str]) -> Command {
    let mut argv = vec!["bellbench"];
    argv.extend_from_slice(args);
    Cli::try_parse_from(argv).unwrap().command
}

fn run(args: &[&str]) -> Result<String, CliError> {
    match parse(args) {
        Command::Scan(a) => commands::run_scan(&a),
        Command::Bell(a) => commands::run_bell(&a),
        Command::Diagnose(a) => commands::run_diagnose(&a),
        Command::Fit(a) => commands::run_fit(&a),
        Command::Tune(a) => commands::run_tune(&a),
        Command::Calibrate(a) => commands::run_calibrate(&a),
        Command::Bound(a) => commands::run_bound(&a),
        Command::Serve(_) => panic!("not exercised here"),
    }
}

fn write_config(dir: &tempfile::TempDir, config: &ConfigFile) -> String {
    let path = dir.path().join("config.json");
    std::fs::write(&path, serde_json::to_string(config).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn bell_on_reference_table() {
    let path = fixture("table1.csv");
    let text = run(&["bell", "--counts", path.to_str().unwrap()]).unwrap();
    assert!(text.contains("S = 2.3073 ± 0.0348"), "{text}");
    assert!(text.contains("violated: |S| exceeds 2 by 8.8 standard deviations"), "{text}");
    assert!(text.contains("E(a', b') = +0.5347"), "{text}");
}

#[test]
fn bell_json_is_a_result_document() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture("table1.csv");
    let out = dir.path().join("bell.json");
    let text = run(&["bell", "--counts", path.to_str().unwrap(), "--json", "--out", out.to_str().unwrap()]).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["result"]["kind"], "chsh");
    assert_eq!(v["inputs_sha256"], "01ff1e351d940d9a361aea126d0ebdc3766d164f125519180561f8286120285a");
    let doc = load_result(&out).unwrap();
    match doc.result {
        AnalysisResult::Chsh(r) => assert!((r.s_value - 2.307316).abs() < 1e-6),
        other => panic!("wrong kind: {other:?}"),
    }
}

#[test]
fn bell_missing_cell_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("table1.csv")).unwrap();
    let short: Vec<&str> = text.lines().take(16).collect();
    let path = dir.path().join("short.csv");
    std::fs::write(&path, short.join("\n") + "\n").unwrap();
    let err = run(&["bell", "--counts", path.to_str().unwrap()]).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
    assert!(err.to_string().contains("(90, 112.5)"), "{err}");
}

#[test]
fn bell_missing_file_is_an_io_error() {
    let err = run(&["bell", "--counts", "/definitely/not/here.csv"]).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_IO);
}

#[test]
fn bell_counts_conflicts_with_seed() {
    let path = fixture("table1.csv");
    assert!(Cli::try_parse_from(["bellbench", "bell", "--counts", path.to_str().unwrap(), "--seed", "1"]).is_err());
}

#[test]
fn simulated_ideal_pairs_approach_the_quantum_maximum() {
    let dir = tempfile::tempdir().unwrap();
    let config = ConfigFile {
        apparatus: ApparatusConfig::pairs_only(1e5, 0.0, 11),
        ..ConfigFile::default()
    };
    let path = write_config(&dir, &config);
    let text = run(&["bell", "--config", &path, "--duration", "100", "--json"]).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let s = v["result"]["values"]["s_value"].as_f64().unwrap();
    let sigma = v["result"]["values"]["sigma_s"].as_f64().unwrap();
    assert!(sigma < 2e-3);
    assert!((s - 2.0 * 2f64.sqrt()).abs() <= 4.0 * sigma, "S = {s} ± {sigma}");
}

#[test]
fn diagnose_prints_rounded_and_full_values() {
    let text = run(&["diagnose", "293", "307", "22", "286"]).unwrap();
    assert!(text.contains("C = 22\n"), "{text}");
    assert!(text.contains("A = 556\n"), "{text}");
    assert!(text.contains("theta_l = 45.7° (45.7214°)"), "{text}");
    assert!(text.contains("phi_m = 25.9° (25.8989°)"), "{text}");
}

#[test]
fn diagnose_rejects_inverted_counts() {
    let err = run(&["diagnose", "10", "307", "22", "286"]).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_VALIDATION);
}

#[test]
fn scan_defaults_cover_four_alphas() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("scan.csv");
    let plot = dir.path().join("plot.json");
    run(&["scan", "--seed", "4", "--out", csv.to_str().unwrap(), "--plot", plot.to_str().unwrap()]).unwrap();
    let records = load_counts(&csv).unwrap();
    assert_eq!(records.len(), 4 * 36);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&plot).unwrap()).unwrap();
    let series = v["series"].as_array().unwrap();
    assert_eq!(series.len(), 4);
    let config = ConfigFile::default();
    let state = config.source.prepare(config.dials.theta_l, config.dials.phi_l);
    for (s, alpha) in series.iter().zip([0.0, 45.0, 90.0, 135.0]) {
        assert_eq!(s["alpha_deg"].as_f64().unwrap(), alpha);
        let points = s["points"].as_array().unwrap();
        assert_eq!(points.len(), 36);
        for p in points {
            let beta = p["beta_deg"].as_f64().unwrap();
            let expected = coincidence_mean(&config.apparatus, &state, deg(alpha), deg(beta), 1.0).unwrap();
            assert!((p["expected"].as_f64().unwrap() - expected).abs() < 1e-9);
            let n = p["n_coinc"].as_f64().unwrap();
            assert!((p["sigma"].as_f64().unwrap() - n.sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn scan_is_deterministic_per_seed() {
    let a = run(&["scan", "--seed", "9", "--alphas", "0,45"]).unwrap();
    let b = run(&["scan", "--seed", "9", "--alphas", "0,45"]).unwrap();
    let c = run(&["scan", "--seed", "10", "--alphas", "0,45"]).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn scan_rejects_zero_duration_and_empty_range() {
    assert_eq!(run(&["scan", "--duration", "0"]).unwrap_err().exit_code(), EXIT_VALIDATION);
    assert_eq!(
        run(&["scan", "--beta-start", "90", "--beta-stop", "0"]).unwrap_err().exit_code(),
        EXIT_VALIDATION
    );
}

#[test]
fn fit_recovers_a_simulated_scan() {
    let dir = tempfile::tempdir().unwrap();
    let config = ConfigFile {
        apparatus: ApparatusConfig { beta_offset: 4.0, ..ApparatusConfig::pairs_only(2000.0, 5.0, 21) },
        source: PumpSource { delta_deg: 0.0, visibility: 0.9 },
        ..ConfigFile::default()
    };
    let path = write_config(&dir, &config);
    let csv = dir.path().join("scan.csv");
    run(&["scan", "--config", &path, "--duration", "2", "--out", csv.to_str().unwrap()]).unwrap();
    let text = run(&["fit", csv.to_str().unwrap(), "--beta-shift"]).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["result"]["kind"], "fit");
    let fit = &v["result"]["values"];
    let shift = fit["beta_shift"].as_f64().unwrap();
    let theta = fit["theta_l"].as_f64().unwrap();
    let cos_phi = fit["cos_phi_m"].as_f64().unwrap();
    assert!((shift - 4.0).abs() < 0.5, "shift {shift}");
    assert!((theta - 45.0).abs() < 0.5, "theta {theta}");
    assert!((cos_phi - 0.9).abs() < 0.03, "cos phi {cos_phi}");
}

#[test]
fn tune_is_deterministic_and_within_budget() {
    let args = ["tune", "--budget", "200", "--seed", "7", "--theta-l", "10", "--phi-l", "120"];
    let a = run(&args).unwrap();
    assert_eq!(a, run(&args).unwrap());
    let v: Value = serde_json::from_str(&a).unwrap();
    assert!(v["acquisitions"].as_u64().unwrap() <= 200);
    let theta = v["diagnostics"]["theta_l"].as_f64().unwrap();
    assert!((43.0..=47.0).contains(&theta), "theta {theta}");
}

#[test]
fn calibrate_and_bound_report_json() {
    let cal: Value = serde_json::from_str(&run(&["calibrate", "--repetitions", "40", "--seed", "2"]).unwrap()).unwrap();
    assert_eq!(cal["repetitions"], 40);
    assert!(cal["std_s"].as_f64().unwrap() > 0.0);
    let bound: Value = serde_json::from_str(&run(&["bound", "--strategies", "20", "--quadruples", "10"]).unwrap()).unwrap();
    assert_eq!(bound["evaluations"], 200);
    assert!(bound["max_abs_s"].as_f64().unwrap() <= 2.0 + 1e-9);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_bellbench");
    let ok = Process::new(bin).args(["bell", "--counts"]).arg(fixture("table1.csv")).output().unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("8.8 standard deviations"));

    let bad = Process::new(bin).args(["scan", "--duration", "0"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(i32::from(EXIT_VALIDATION)));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error: "));

    let missing = Process::new(bin).args(["fit", "/no/such/scan.csv"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(i32::from(EXIT_IO)));
}
