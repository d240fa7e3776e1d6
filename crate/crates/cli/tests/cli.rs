use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use esctrack::config::ExperimentConfig;
use esctrack::experiment::fig1_config;
use esctrack::Waveform;

const SHORT: &str = r#"
t_end = 2.0
output_dir = "short"

[plant]
params = "nominal"

[reference]
waveform = "trig"
period = 2.0

[gains]
gamma = 1.0
epsilon = 0.05
eta = 1.0

[integrator]
method = "rk4"
dt = 1e-3

[initial]
delta_x = [0.05, 0.01]
u0 = [0.0, 0.0]

[options]
samples_per_period = 200

[analysis]
rho = 0.5
window = 0.5
"#;

fn esctrack(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esctrack"))
        .args(args)
        .env("ESCTRACK_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn bundled_configs_match_defaults() {
    for (file, w) in [("fig1a.toml", Waveform::Trig), ("fig1b.toml", Waveform::BangBang)] {
        let cfg = ExperimentConfig::from_path(&configs_dir().join(file)).unwrap();
        assert_eq!(cfg, fig1_config(w), "{file}");
    }
}

#[test]
fn print_defaults_parses_back() {
    let tmp = tempfile::tempdir().unwrap();
    for w in ["trig", "bang-bang"] {
        let out = esctrack(tmp.path(), &["print-defaults", "--waveform", w]);
        assert!(out.status.success());
        let cfg = ExperimentConfig::from_toml_str(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
        cfg.validate().unwrap();
    }
}

#[test]
fn nonpositive_epsilon_is_a_config_rejection() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &SHORT.replace("epsilon = 0.05", "epsilon = 0.0"));
    let out = esctrack(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gains.epsilon"), "{err}");
    assert!(!tmp.path().join("short").exists());
}

#[test]
fn unknown_key_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "typo.toml", &SHORT.replace("eta = 1.0", "eta = 1.0\ngama = 3.0"));
    let out = esctrack(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("typo.toml:16:"), "{err}");
}

#[test]
fn missing_config_is_a_config_rejection() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esctrack(tmp.path(), &["run", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_round_trip_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "short.toml", SHORT);
    let first = tmp.path().join("first");
    let out = esctrack(&first, &["run", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = first.join("short");
    let manifest = run_dir.join("manifest.toml");

    let second = tmp.path().join("second");
    let out = esctrack(&second, &["run", manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rerun_dir = second.join("short");

    for f in ["trajectory.csv", "reference.csv", "errors.csv", "period_cost.csv", "manifest.toml"] {
        let a = std::fs::read(run_dir.join(f)).unwrap();
        let b = std::fs::read(rerun_dir.join(f)).unwrap();
        assert!(a == b, "{f} differs after the manifest round trip");
    }
    let header = std::fs::read_to_string(run_dir.join("trajectory.csv")).unwrap();
    assert!(header.starts_with("t,x1,x2,u1,u2,xs1,xs2,y\n"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{SHORT}\n[sweep]\ngamma = [0.5, 1.0, 1.0]\nepsilon = [0.05, 0.1]\neta = [1.0]\nsteps_per_dither = 50.0\n"
    );
    let cfg = write_config(tmp.path(), "sweep.toml", &text);
    let out = esctrack(tmp.path(), &["sweep", cfg.to_str().unwrap(), "--jobs", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tmp.path().join("short");
    let mut rdr = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 0.5);
    // gamma-major order: the duplicated gamma = 1 cells must agree exactly
    assert_eq!(rows[2], rows[4]);
    assert_eq!(rows[3], rows[5]);
    let cells = std::fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(cells, 6);
}

#[test]
fn sweep_is_independent_of_job_count() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SHORT}\n[sweep]\ngamma = [0.5, 1.0]\nepsilon = [0.05]\neta = [1.0, 2.0]\n");
    let cfg = write_config(tmp.path(), "sweep.toml", &text);
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    assert!(esctrack(&one, &["sweep", cfg.to_str().unwrap(), "--jobs", "1"]).status.success());
    assert!(esctrack(&four, &["sweep", cfg.to_str().unwrap(), "--jobs", "4"]).status.success());
    let a = std::fs::read(one.join("short/sweep.csv")).unwrap();
    let b = std::fs::read(four.join("short/sweep.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn verify_jacobian_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esctrack(tmp.path(), &["verify", "jacobian"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn verify_rejects_unknown_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esctrack(tmp.path(), &["verify", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_cell_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run_cfg = write_config(tmp.path(), "one.toml", SHORT);
    let sweep_cfg = write_config(
        tmp.path(),
        "sweep.toml",
        &format!("{SHORT}\n[sweep]\ngamma = [1.0]\nepsilon = [0.05]\neta = [1.0]\n"),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(esctrack(&a, &["run", run_cfg.to_str().unwrap()]).status.success());
    assert!(esctrack(&b, &["sweep", sweep_cfg.to_str().unwrap(), "--jobs", "1"]).status.success());
    let cell = b.join("short").join("cell-000_g1_e0.05_n1");
    for f in ["trajectory.csv", "errors.csv", "report.toml"] {
        let x = std::fs::read(a.join("short").join(f)).unwrap();
        let y = std::fs::read(cell.join(f)).unwrap();
        assert!(x == y, "{f} differs between run and 1x1x1 sweep");
    }
}
