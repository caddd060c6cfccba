//! End-to-end checks of the `instab` binary: exit codes, report layout,
//! certificate round trips, and reproducibility.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_instab"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).expect("output file exists");
    serde_json::from_str(&text).expect("valid JSON")
}

#[test]
fn analyze_reports_the_certified_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("analyze")
        .arg(config("oscillator_unstable_multnoise.json"))
        .arg("--out")
        .arg(dir.path())
        .args(["--format", "both"]));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let report = read_json(&dir.path().join("oscillator_unstable_multnoise.analysis.json"));
    assert_eq!(report["schema"], "instab.analysis/1");
    assert_eq!(report["lmi"]["status"], "ok");
    let threshold = report["lmi"]["threshold"].as_f64().unwrap();
    assert!((threshold - 10.8).abs() <= 0.05 * 10.8, "threshold {threshold}");
    assert_eq!(report["eigen"]["status"], "skipped");
    assert_eq!(report["scalar"]["status"], "skipped");
    assert_eq!(report["envelope"]["status"], "ok");
    assert_eq!(
        report["model"]["digest"].as_str().unwrap(),
        report["lmi"]["certificate"]["model_digest"].as_str().unwrap()
    );

    // The rate scan CSV has the documented header and one row per sample.
    let csv = std::fs::read_to_string(dir.path().join("oscillator_unstable_multnoise.rate_scan.csv"))
        .unwrap();
    assert!(csv.starts_with("phi,u_star\n"));
    assert!(csv.lines().count() > 32);

    // The emitted certificate passes independent re-verification.
    let check = run(bin()
        .arg("certify-check")
        .arg(dir.path().join("oscillator_unstable_multnoise.certificate.json"))
        .arg(config("oscillator_unstable_multnoise.json")));
    assert!(check.status.success(), "stderr: {}", String::from_utf8_lossy(&check.stderr));
}

#[test]
fn analyze_additive_model_reports_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("analyze")
        .arg(config("oscillator_unstable_addnoise.json"))
        .arg("--out")
        .arg(dir.path()));
    assert!(out.status.success());

    let report = read_json(&dir.path().join("oscillator_unstable_addnoise.analysis.json"));
    let lmi = report["lmi"]["threshold"].as_f64().unwrap();
    assert!((lmi - 1.0).abs() <= 0.1, "lmi threshold {lmi}");
    assert_eq!(report["eigen"]["status"], "ok");
    let eigen = report["eigen"]["threshold"].as_f64().unwrap();
    assert!((eigen - 0.75).abs() <= 1e-9, "eigen threshold {eigen}");
    let modes = report["eigen"]["modes"].as_array().unwrap();
    assert!(!modes.is_empty());
    for mode in modes {
        assert!(mode["lambda"].as_array().unwrap().len() == 2);
    }
}

#[test]
fn malformed_model_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"A\": [[0, 1]]").unwrap();
    let out = run(bin().arg("analyze").arg(&bad));
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_model_file_fails() {
    let out = run(bin().arg("simulate").arg("/nonexistent/model.json"));
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn mismatched_certificate_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("analyze")
        .arg(config("oscillator_unstable_multnoise.json"))
        .arg("--out")
        .arg(dir.path()));
    assert!(out.status.success());
    let check = run(bin()
        .arg("certify-check")
        .arg(dir.path().join("oscillator_unstable_multnoise.certificate.json"))
        .arg(config("oscillator_damped_multnoise.json")));
    assert_eq!(check.status.code(), Some(3));
}

#[test]
fn perturbed_certificate_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("analyze")
        .arg(config("oscillator_unstable_addnoise.json"))
        .arg("--out")
        .arg(dir.path()));
    assert!(out.status.success());

    let cert_path = dir.path().join("oscillator_unstable_addnoise.certificate.json");
    let mut cert = read_json(&cert_path);
    let r00 = cert["R"][0][0].as_f64().unwrap();
    cert["R"][0][0] = Value::from(r00 + 1e-4);
    std::fs::write(&cert_path, serde_json::to_string(&cert).unwrap()).unwrap();

    let check = run(bin()
        .arg("certify-check")
        .arg(&cert_path)
        .arg(config("oscillator_unstable_addnoise.json")));
    assert_eq!(check.status.code(), Some(4));
    assert!(!check.stderr.is_empty());
}

#[test]
fn simulate_zero_policy_shows_growth() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("simulate")
        .arg(config("oscillator_unstable_addnoise.json"))
        .args(["--controller", "zero", "--t-end", "5", "--dt", "2e-3"])
        .args(["--paths", "400", "--format", "csv"])
        .arg("--out")
        .arg(dir.path()));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let csv =
        std::fs::read_to_string(dir.path().join("oscillator_unstable_addnoise.sim.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,mean_x2,stderr_x2,mean_V,u_power_avg,frac_frozen");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2501);
    let at = |row: &[&str], col: usize| row[col].parse::<f64>().unwrap();
    let early = at(&rows[250], 1);
    let last = at(rows.last().unwrap(), 1);
    assert!(last > 20.0 * early, "no growth: {early} -> {last}");
    // Uncontrolled: the power column stays identically zero.
    assert!(rows.iter().all(|r| at(r, 4) == 0.0));
}

#[test]
fn simulate_feedback_stays_bounded_and_audits() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin()
        .arg("simulate")
        .arg(config("scalar_feedback_benchmark.json"))
        .args(["--controller", "feedback", "--gain=-3"])
        .args(["--paths", "2000", "--t-end", "4", "--u-hat", "3", "--seed", "7"])
        .arg("--out")
        .arg(dir.path()));
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let summary = read_json(&dir.path().join("scalar_feedback_benchmark.sim.json"));
    assert_eq!(summary["schema"], "instab.simulation/1");
    assert_eq!(summary["diverged"], false);
    let terminal = summary["terminal"]["mean_x2"].as_f64().unwrap();
    assert!(terminal < 0.4, "closed loop should settle near 1/3, got {terminal}");
    assert_eq!(summary["audit"]["satisfied"], true);
    let dev = summary["oracle"]["max_deviation_stderr"].as_f64().unwrap();
    assert!(dev <= 4.0, "oracle deviation {dev}");
    assert!(summary["note"].as_str().unwrap().contains("illustrative"));
}

#[test]
fn model_is_read_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("scalar_feedback_benchmark.json")).unwrap();
    let mut child = bin()
        .arg("analyze")
        .arg("-")
        .arg("--out")
        .arg(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.as_mut().unwrap().write_all(text.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let report = read_json(&dir.path().join("model.analysis.json"));
    assert_eq!(report["scalar"]["status"], "ok");
    assert_eq!(report["scalar"]["regime"], "TightThreshold");
    let tight = report["scalar"]["u_threshold"].as_f64().unwrap();
    let lmi = report["lmi"]["threshold"].as_f64().unwrap();
    assert!((tight - 3.0).abs() < 1e-12);
    assert!((lmi - tight).abs() <= 0.01 * tight, "lmi {lmi} vs closed form {tight}");
}

#[test]
fn same_seed_reproduces_identical_files_across_thread_counts() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (dir, threads) in [(&dir1, "1"), (&dir2, "3")] {
        let out = run(bin()
            .arg("simulate")
            .arg(config("oscillator_unstable_addnoise.json"))
            .args(["--controller", "saturated", "--gain=-1,-2", "--power-cap", "0.5"])
            .args(["--paths", "600", "--t-end", "2", "--dt", "2e-3", "--seed", "42"])
            .args(["--format", "csv"])
            .arg("--out")
            .arg(dir.path())
            .env("INSTAB_THREADS", threads));
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push(
            std::fs::read(dir.path().join("oscillator_unstable_addnoise.sim.csv")).unwrap(),
        );
    }
    assert_eq!(outputs[0], outputs[1], "thread count changed the statistics");
}

#[test]
fn zero_policy_rejects_feedback_flags() {
    let out = run(bin()
        .arg("simulate")
        .arg(config("scalar_feedback_benchmark.json"))
        .args(["--controller", "zero", "--gain=-3"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_noise_defeats_the_requested_budget() {
    let dir = tempfile::tempdir().unwrap();
    let model = config("oscillator_unstable_addnoise.json");
    let out = run(bin().arg("analyze").arg(&model).arg("--out").arg(dir.path()));
    assert!(out.status.success());
    let cert = dir.path().join("oscillator_unstable_addnoise.certificate.json");

    // The base model certifies only budgets below ~1; ask for 3.
    let synth = run(bin()
        .arg("synth-noise")
        .arg(&cert)
        .arg(&model)
        .args(["--u-hat", "3"])
        .arg("--out")
        .arg(dir.path()));
    assert!(synth.status.success(), "stderr: {}", String::from_utf8_lossy(&synth.stderr));
    let stdout = String::from_utf8_lossy(&synth.stdout);
    assert!(stdout.contains("insufficient"), "stdout: {stdout}");

    let emitted = dir.path().join("oscillator_unstable_addnoise.synth.json");
    let doc = read_json(&emitted);
    assert_eq!(doc["u_hat"].as_f64(), Some(3.0));
    assert_ne!(doc["D"], read_json(&model)["D"], "noise was not substituted");

    // The substituted model is certifiably instabilizable at that budget.
    let re = run(bin()
        .arg("analyze")
        .arg(&emitted)
        .args(["--u-hat", "3"])
        .arg("--out")
        .arg(dir.path()));
    assert!(re.status.success(), "stderr: {}", String::from_utf8_lossy(&re.stderr));
    let report = read_json(&dir.path().join("oscillator_unstable_addnoise.synth.analysis.json"));
    assert_eq!(report["budget_verdict"]["verdict"], "Instabilizable");
    assert!(report["lmi"]["threshold"].as_f64().unwrap() > 3.0);

    // Pairing the certificate with the wrong model is refused.
    let mismatched = run(bin()
        .arg("synth-noise")
        .arg(&cert)
        .arg(config("oscillator_damped_multnoise.json"))
        .args(["--u-hat", "3"])
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(mismatched.status.code(), Some(3));
}
