//! End-to-end checks of the `tnml` binary: subcommand wiring, file formats,
//! determinism, and exit codes.

use std::path::Path;
use std::process::Command;

fn tnml() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tnml"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    let base = "\
d = 8
sphere_dim = 8
subspace_dim = 2
tasks = 4
samples_per_task = 10
noise = 0.05
loss = clipped-absolute
b = 1.5
delta = 0.1
max_iters = 150
step_scale = 2.0
trials = 2
seed = 7
heldout_samples = 2000
";
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

#[test]
fn synth_train_bounds_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");

    let synth = tnml()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(synth.status.success(), "synth failed: {}", String::from_utf8_lossy(&synth.stderr));
    let dataset = dir.path().join("dataset.csv");
    assert!(dataset.exists());
    assert!(dir.path().join("ground_truth.csv").exists());
    let header = std::fs::read_to_string(&dataset).unwrap();
    assert!(header.starts_with("task,y,x0,x1,x2,x3,x4,x5,x6,x7"));

    let train = tnml()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(train.status.success(), "train failed: {}", String::from_utf8_lossy(&train.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,objective,trace_norm,gap"));
    assert!(dir.path().join("weights.csv").exists());
    assert!(dir.path().join("train_summary.json").exists());

    let bounds = tnml()
        .args(["bounds", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(bounds.status.success());
    let report = std::fs::read_to_string(dir.path().join("bound_empirical.json")).unwrap();
    for key in ["covariance_term", "log_term", "confidence_term", "total", "inputs"] {
        assert!(report.contains(key), "bound report missing {key}");
    }
    assert!(dir.path().join("bound_distribution.json").exists());
}

#[test]
fn report_is_deterministic_and_asserts() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg = write_config(dir_a.path(), "");
    for dir in [dir_a.path(), dir_b.path()] {
        let out = tnml()
            .args(["report", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir)
            .args(["--trials", "1"])
            .output()
            .unwrap();
        assert!(out.status.success(), "report failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir_a.path().join("trial_000.json")).unwrap();
    let b = std::fs::read(dir_b.path().join("trial_000.json")).unwrap();
    assert_eq!(a, b, "records differ across identical runs");
    let agg_a = std::fs::read(dir_a.path().join("aggregate.json")).unwrap();
    let agg_b = std::fs::read(dir_b.path().join("aggregate.json")).unwrap();
    assert_eq!(agg_a, agg_b);
}

#[test]
fn sweep_writes_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t_grid = 2, 4\ntrials = 1\n");
    let out = tnml()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "sweep failed: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trial,T,n_bar,d,M,K,B,delta,emp_risk,pop_risk,excess,solver_gap,bound_i,bound_ii,kakade2,kakade3,baseline_excess,subspace_limit"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn concentration_passes_with_small_battery() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "conc_trials = 1500\nconc_proj_dim = 8\nconc_proj_count = 10\n",
    );
    let out = tnml()
        .args(["concentration", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "concentration exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout)
    );
    let tail = std::fs::read_to_string(dir.path().join("tail_subexponential.csv")).unwrap();
    assert!(tail.starts_with("s,empirical,stderr,bound,pass"));
    assert!(dir.path().join("tail_oliveira_centered.csv").exists());
    assert!(dir.path().join("tail_oliveira_upper.csv").exists());
}

#[test]
fn concentration_refuses_thin_trials_with_error_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "conc_trials = 100\n");
    let out = tnml()
        .args(["concentration", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("statistical floor"));
}

#[test]
fn dataset_round_trips_through_cli_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    tnml()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    let path = dir.path().join("dataset.csv");
    let data = tnml::data::MultitaskDataset::read_csv(&path).unwrap();
    let copy = dir.path().join("copy.csv");
    data.write_csv(&copy).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mystery_knob = 3\n");
    let out = tnml()
        .args(["report", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
