use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use otcover::io::{read_csv, CurveRow, TraceRow};
use otcover::ExperimentConfig;

fn otcover(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otcover")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "grid = 16\nn_list = [3, 5, 8, 12]\n";

fn run_small(dir: &Path, extra: &str, threads: usize) -> PathBuf {
    let steps = if extra.contains("max_steps") { "" } else { "max_steps = 15\n" };
    let cfg = write_config(dir, &format!("{SMALL}{steps}{extra}"));
    let out = dir.join("run");
    let o = otcover(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        &threads.to_string(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn print_config_is_a_valid_config() {
    let o = otcover(&["print-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::default());
    let flag = otcover(&["--print-config"]);
    assert_eq!(String::from_utf8(flag.stdout).unwrap(), text);
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "", 1);
    for name in ["target.csv", "summary.json", "config.toml"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for n in [3, 5, 8, 12] {
        let trace: Vec<TraceRow> = read_csv(&out.join(format!("trace_N{n}.csv"))).unwrap();
        assert!(out.join(format!("positions_N{n}.csv")).is_file());
        assert!(out.join(format!("trajectory_N{n}.csv")).is_file());
        let steady = summary["steady_state"][n.to_string()].as_f64().unwrap();
        assert_eq!(steady, trace.last().unwrap().value);
    }
    let header = fs::read_to_string(out.join("trace_N3.csv")).unwrap();
    assert!(header.starts_with("step,value,step_norm,tau,inner_iters,fallback\n"));
}

#[test]
fn zero_steps_keep_only_initial_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "max_steps = 0\n", 1);
    for n in [3, 12] {
        let trace: Vec<TraceRow> = read_csv(&out.join(format!("trace_N{n}.csv"))).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].step, 0);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_small(a.path(), "seed = 11\n", 1);
    let rb = run_small(b.path(), "seed = 11\n", 3);
    let (fa, fb) = (csv_files(&ra), csv_files(&rb));
    assert_eq!(fa.len(), 13);
    assert_eq!(fa, fb);
    assert_eq!(fs::read(ra.join("summary.json")).unwrap(), fs::read(rb.join("summary.json")).unwrap());
    let c = tempfile::tempdir().unwrap();
    let rc = run_small(c.path(), "seed = 12\n", 1);
    assert_ne!(csv_files(&rc), fa);
}

#[test]
fn seed_flag_overrides_the_file() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_small(a.path(), "seed = 5\n", 1);
    let cfg = write_config(b.path(), &format!("{SMALL}max_steps = 15\nseed = 1\n"));
    let rb = b.path().join("run");
    let o = otcover(&["run", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", rb.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(csv_files(&ra), csv_files(&rb));
}

#[test]
fn config_errors_exit_with_2_and_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid = 16\nn_list = [4, 0]\n");
    let o = otcover(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("exp.toml"), "{err}");

    let cfg = write_config(dir.path(), "grid = 16\nscheme = \"newton\"\n");
    let o = otcover(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn unknown_arguments_are_usage_errors() {
    assert_eq!(otcover(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(otcover(&["validate", "everything"]).status.code(), Some(2));
}

#[test]
fn validate_reports_json_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = otcover(&["validate", "free_weights", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["suite"], "free_weights");
    assert_eq!(v[0]["checks"].as_array().unwrap().len(), 40);
    assert!(dir.path().join("validate.json").is_file());

    // the 0.08 threshold sits below the sampling noise of 2000 particles
    let o = otcover(&["validate", "consistency"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["passed"], false);
    assert_eq!(v[0]["checks"][1]["passed"], true);
}

#[test]
fn plot_emits_curves_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "", 1);
    let o = otcover(&["plot", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curves: Vec<CurveRow> = read_csv(&out.join("curves.csv")).unwrap();
    for n in [3, 5, 8, 12] {
        let trace: Vec<TraceRow> = read_csv(&out.join(format!("trace_N{n}.csv"))).unwrap();
        let series: Vec<f64> = curves.iter().filter(|r| r.n == n).map(|r| r.value).collect();
        assert_eq!(series, trace.iter().map(|r| r.value).collect::<Vec<_>>());
    }
    if cfg!(feature = "plot") {
        let pngs: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .filter_map(|e| e.unwrap().file_name().into_string().ok())
            .filter(|n| n.ends_with(".png"))
            .collect();
        assert_eq!(pngs.len(), 5, "{pngs:?}");
        assert!(pngs.iter().filter(|n| n.starts_with("scatter_N")).count() == 4);
        assert!(pngs.contains(&"curves.png".to_string()));
    }
}

#[test]
fn plot_of_an_empty_trace_has_only_initial_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), "max_steps = 0\n", 1);
    let o = otcover(&["plot", out.to_str().unwrap()]);
    assert!(o.status.success());
    let curves: Vec<CurveRow> = read_csv(&out.join("curves.csv")).unwrap();
    assert_eq!(curves.len(), 4);
    assert!(curves.iter().all(|r| r.step == 0));
}

#[test]
fn plot_without_artifacts_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = otcover(&["plot", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}

#[test]
fn macro_runs_write_densities_and_plot_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid = 12\nscheme = \"macro\"\nn_list = [400]\nmax_steps = 3\n");
    let out = dir.path().join("run");
    let o = otcover(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("density_N400.csv").is_file());
    assert!(!out.join("positions_N400.csv").exists());
    assert!(otcover(&["plot", out.to_str().unwrap()]).status.success());
    if cfg!(feature = "plot") {
        assert!(out.join("density_N400.png").is_file());
    }
}
