//! End-to-end tests driving the built binary.

use std::path::Path;
use std::process::{Command, Output};

const KEY: &str = "2b7e151628aed2a6abf7158809cf4f3c";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpakit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawning cpakit")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate(dir: &Path, name: &str, n: usize, m: usize, sigma: f64, seed: u64) -> (String, String) {
    let prefix = dir.join(name).to_string_lossy().into_owned();
    let out = run(&[
        "simulate",
        "--key",
        KEY,
        "--n",
        &n.to_string(),
        "--m",
        &m.to_string(),
        "--sigma",
        &sigma.to_string(),
        "--seed",
        &seed.to_string(),
        "--out-prefix",
        &prefix,
    ]);
    assert!(out.status.success(), "simulate failed: {}", stderr(&out));
    (format!("{prefix}.traces"), format!("{prefix}.ct"))
}

#[test]
fn simulate_writes_exact_file_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, ct) = simulate(dir.path(), "a", 10, 16, 1.0, 1);
    let trace_len = std::fs::metadata(&traces).unwrap().len();
    assert_eq!(trace_len, 16 + 10 * 16 * 8);
    let ct_text = std::fs::read_to_string(&ct).unwrap();
    assert_eq!(ct_text.lines().count(), 10);
    assert!(ct_text.lines().all(|l| l.len() == 32));
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (t1, c1) = simulate(dir.path(), "a", 8, 32, 2.0, 42);
    let (t2, c2) = simulate(dir.path(), "b", 8, 32, 2.0, 42);
    assert_eq!(std::fs::read(t1).unwrap(), std::fs::read(t2).unwrap());
    assert_eq!(std::fs::read(c1).unwrap(), std::fs::read(c2).unwrap());
}

#[test]
fn simulate_rejects_short_key_hex() {
    let out = run(&[
        "simulate",
        "--key",
        &KEY[..31],
        "--n",
        "4",
        "--m",
        "16",
        "--out-prefix",
        "/tmp/unused",
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("32 hex characters"), "stderr: {err}");
}

#[test]
fn attack_recovers_key_and_is_worker_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, ct) = simulate(dir.path(), "a", 400, 32, 1.0, 7);
    let base = ["attack", "--traces", &traces, "--ciphertexts", &ct];

    let one = run(&[&base[..], &["--workers", "1"]].concat());
    assert!(one.status.success(), "{}", stderr(&one));
    let text = stdout(&one);
    assert!(text.contains(KEY), "stdout missing key: {text}");
    assert!(text.contains("round-10 key:"));

    let eight = run(&[&base[..], &["--workers", "8"]].concat());
    assert!(eight.status.success());
    assert_eq!(stdout(&one), stdout(&eight));
}

#[test]
fn attack_reports_count_mismatch_with_both_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, _) = simulate(dir.path(), "a", 12, 16, 1.0, 1);
    let (_, ct) = simulate(dir.path(), "b", 9, 16, 1.0, 2);
    let out = run(&["attack", "--traces", &traces, "--ciphertexts", &ct]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("12") && err.contains("9"), "stderr: {err}");
}

#[test]
fn attack_json_is_one_machine_readable_document() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, ct) = simulate(dir.path(), "a", 300, 16, 0.5, 3);
    let out = run(&[
        "attack",
        "--traces",
        &traces,
        "--ciphertexts",
        &ct,
        "--json",
    ]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["master_key"], KEY);
    assert_eq!(doc["bytes"].as_array().unwrap().len(), 16);
}

#[test]
fn bench_emits_the_pinned_csv_schema() {
    let out = run(&[
        "bench",
        "--synth-n",
        "50",
        "--synth-m",
        "64",
        "--workers",
        "1,2",
        "--reps",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,m,workers,precision,phase1_s,phase2_s,phase3_s,phase4_s,total_s,throughput"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        for field in row.split(',') {
            let v: f64 = field.parse().expect("numeric CSV field");
            assert!(v.is_finite());
        }
    }
}

#[test]
fn inspect_prints_header_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, _) = simulate(dir.path(), "a", 23, 48, 1.0, 4);
    let out = run(&["inspect", "--traces", &traces]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("n: 23"));
    assert!(text.contains("m: 48"));
    assert!(text.contains("precision: double"));
    assert!(text.contains("layout: trace-major"));
}

#[test]
fn export_curves_peak_at_planted_samples_when_noiseless() {
    let dir = tempfile::tempdir().unwrap();
    let (traces, ct) = simulate(dir.path(), "a", 60, 32, 0.0, 5);
    let csv = dir.path().join("curves.csv");
    let out = run(&[
        "export-curves",
        "--traces",
        &traces,
        "--ciphertexts",
        &ct,
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "byte,subkey,sample,rho");
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    // m rows per byte position
    assert_eq!(rows.len(), 16 * 32);
    for b in 0..16u32 {
        let byte_rows: Vec<&Vec<String>> = rows
            .iter()
            .filter(|r| r[0].parse::<u32>().unwrap() == b)
            .collect();
        assert_eq!(byte_rows.len(), 32);
        let (mut best_sample, mut best_rho) = (0u32, f64::MIN);
        for r in byte_rows {
            let sample: u32 = r[2].parse().unwrap();
            let rho: f64 = r[3].parse().unwrap();
            if rho > best_rho {
                best_rho = rho;
                best_sample = sample;
            }
        }
        // default leak placement is b * (m / 16) = b * 2
        assert_eq!(best_sample, b * 2, "byte {b}");
        assert!((best_rho - 1.0).abs() <= 1e-9, "byte {b}: rho {best_rho}");
    }
}

#[test]
fn attack_accepts_csv_trace_format() {
    use cpakit::synth::{generate_dataset, SynthConfig};
    use cpakit::trace::{save_ciphertexts, save_traces, FileFormat};

    let dir = tempfile::tempdir().unwrap();
    let key = cpakit::MasterKey::from_hex(KEY).unwrap();
    let cfg = SynthConfig::new(key, 300, 16, 0.5, 11).unwrap();
    let (ts, cts) = generate_dataset(&cfg).unwrap();
    let traces = dir.path().join("a.csv");
    let ct = dir.path().join("a.ct");
    save_traces(&ts, &traces, FileFormat::Csv).unwrap();
    save_ciphertexts(&cts, &ct).unwrap();

    let out = run(&[
        "attack",
        "--traces",
        traces.to_str().unwrap(),
        "--ciphertexts",
        ct.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains(KEY));
}

#[test]
fn unknown_flag_exits_nonzero_with_usage() {
    let out = run(&["attack", "--bogus"]);
    assert!(!out.status.success());
    assert!(stderr(&out).to_lowercase().contains("usage"));
}
