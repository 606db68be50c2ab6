use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn qpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpc"))
        .args(args)
        .env_remove("QPC_PRECISION_DIGITS")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
[constants]
mass = "9.11e-31 kg"
hbar = "1.05e-34 J*s"
v_z = "1.46e7 m/s"

[geometry]
source_width = "500 nm"
distances = ["1 m", "2 mm", "1 m"]

[geometry.plane.1]
half_width = "200 nm"
centers = ["-1 um", "0 um", "1 um"]

[geometry.plane.2]
half_width = "CENTER_WIDTH"
centers = ["-1.2 um", "0 um", "1.2 um"]

[experiment]
sampling_interval = "10 um"
k_min = 0
k_max = 40
decimal_digits = 32
rng_seed = 7
EXTRA
"#;

fn write_small(dir: &Path, width: &str, extra: &str) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL.replace("CENTER_WIDTH", width).replace("EXTRA", extra)).unwrap();
    p
}

#[test]
fn validate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let ok = qpc(&["validate", "--config", path(&config("sim1"))]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("ok"));

    // A gap of exactly twice the half-width is not a separation.
    let touching = write_small(dir.path(), "600 nm", "");
    let out = qpc(&["validate", "--config", path(&touching)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("plane 2"));

    let bad_unit = write_small(dir.path(), "200 furlong", "");
    assert_eq!(qpc(&["validate", "--config", path(&bad_unit)]).status.code(), Some(2));

    let missing = dir.path().join("absent.toml");
    assert_eq!(qpc(&["validate", "--config", path(&missing)]).status.code(), Some(2));
}

#[test]
fn simulate_single_row() {
    let dir = TempDir::new().unwrap();
    let out = qpc(&[
        "--digits",
        "32",
        "simulate",
        "--config",
        path(&config("sim1")),
        "--k-min",
        "3",
        "--k-max",
        "3",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("intensity.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "k,x_meters,raw,normalized,rescaled");
    assert!(lines[1].starts_with("3,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["precision_digits"], 32);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_small(dir.path(), "200 nm", "");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let sim = qpc(&[
            "simulate",
            "--config",
            path(&cfg),
            "--noise-snr",
            "10",
            "--seed",
            "5",
            "--out",
            path(&out_dir),
        ]);
        assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
        let intensity = out_dir.join("intensity.csv");
        let analysis = qpc(&[
            "analyze",
            "--intensity",
            path(&intensity),
            "--config",
            path(&cfg),
            "--m-max",
            "40",
            "--out",
            path(&out_dir),
        ]);
        assert!(analysis.status.success(), "{}", String::from_utf8_lossy(&analysis.stderr));
        outputs.push(
            ["intensity.csv", "r_curve.csv", "eps_curve.csv", "report.json"]
                .map(|f| fs::read(out_dir.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn flat_input_is_reported_degenerate() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("k,x_meters,raw,normalized,rescaled\n");
    for k in 0..20 {
        csv.push_str(&format!("{k},{},1,1,1\n", k as f64 * 1e-6));
    }
    let input = dir.path().join("flat.csv");
    fs::write(&input, csv).unwrap();
    let out = qpc(&["analyze", "--intensity", path(&input), "--m-max", "20", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["degenerate"], true);
    assert_eq!(report["candidates"].as_array().unwrap().len(), 0);
}

#[test]
fn path_cap_is_a_resource_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_small(dir.path(), "200 nm", "path_cap = 4");
    let out = qpc(&["simulate", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sda_crb_and_oracle_reports() {
    let dir = TempDir::new().unwrap();
    let sim1 = config("sim1");
    let sda = qpc(&["sda", "--config", path(&sim1), "--k-pre", "200", "--out", path(dir.path())]);
    assert!(sda.status.success(), "{}", String::from_utf8_lossy(&sda.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sda.json")).unwrap()).unwrap();
    assert_eq!(report["argmin_all"], 173);

    let crb = qpc(&[
        "crb",
        "--config",
        path(&sim1),
        "--k-tilde",
        "173",
        "--samples",
        "60",
        "--out",
        path(dir.path()),
    ]);
    assert!(crb.status.success(), "{}", String::from_utf8_lossy(&crb.stderr));
    let table = fs::read_to_string(dir.path().join("crb.csv")).unwrap();
    assert_eq!(table.lines().count(), 61);

    let oracle = qpc(&[
        "--digits",
        "32",
        "oracle-check",
        "--config",
        path(&sim1),
        "--points",
        "3",
        "--out",
        path(dir.path()),
    ]);
    assert!(oracle.status.success(), "{}", String::from_utf8_lossy(&oracle.stderr));
    assert!(dir.path().join("oracle.json").exists());
}

#[test]
fn environment_overrides_precision() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qpc"))
        .args(["simulate", "--config", path(&config("sim1")), "--k-max", "0", "--out", path(dir.path())])
        .env("QPC_PRECISION_DIGITS", "40")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"precision_digits\": 40"));
}
