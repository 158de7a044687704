use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ALPHAS: &str = "17.23606797749979,7.23606797749979,4.23606797749979";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikeshift"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["simulate", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

#[test]
fn simulate_shape_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path(), "d.csv", &["--n", "10", "--p", "4"]);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("# spikeshift"));
    assert!(text.contains("# config_digest: "));
    assert!(text.contains("\nxi_1,xi_2,xi_3,eta_1,eta_2,eta_3,eta_4\n"));
    let rows = data_rows(&p);
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.len() == 7));
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", &["--n", "30", "--p", "5", "--seed", "9"]);
    let b = simulate(dir.path(), "b.csv", &["--n", "30", "--p", "5", "--seed", "9", "--threads", "2"]);
    let c = simulate(dir.path(), "c.csv", &["--n", "30", "--p", "5", "--seed", "10"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn alt2_raises_second_coordinate_variance_after_change() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(
        dir.path(),
        "d.csv",
        &["--n", "4000", "--p", "4", "--alternative", "alt2", "--delta", "3", "--alphas", "9,5,3"],
    );
    let rows = data_rows(&p);
    let var = |rs: &[Vec<f64>], j: usize| rs.iter().map(|r| r[j] * r[j]).sum::<f64>() / rs.len() as f64;
    let (before, after) = rows.split_at(2400);
    assert!((var(before, 1) - 5.0).abs() < 0.6, "{}", var(before, 1));
    assert!((var(after, 1) - 8.0).abs() < 1.0, "{}", var(after, 1));
    assert!((var(after, 0) - 9.0).abs() < 1.2, "{}", var(after, 0));
}

#[test]
fn test_exit_codes_follow_the_decision() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let null = simulate(d, "null.csv", &["--seed", "1"]);
    let alt = simulate(d, "alt.csv", &["--seed", "1", "--alternative", "alt1", "--delta", "10"]);
    let common = ["--alphas", ALPHAS, "--grid", "60", "--replicates", "2000", "--out-dir", d.to_str().unwrap()];
    let mut a = vec!["test", "--input", null.to_str().unwrap()];
    a.extend_from_slice(&common);
    let o = run(&a);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reject_max"], false);
    assert_eq!(report["config_echo"]["cli"]["grid"], 60);
    assert_eq!(report["mc_p_values"].as_array().unwrap().len(), 2);

    let mut a = vec!["test", "--input", alt.to_str().unwrap()];
    a.extend_from_slice(&common);
    let o = run(&a);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("reject"));
}

#[test]
fn null_runs_mostly_pass_at_five_percent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(&[
        "quantiles", "--alphas", ALPHAS, "--n", "200", "--p", "100", "--replicates", "10000", "--out-dir",
        d.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = d.join("quantiles.json");
    let runs = 60;
    let mut passed = 0;
    for seed in 0..runs {
        let s = seed.to_string();
        let data = simulate(d, "x.csv", &["--seed", &s]);
        let o = run(&[
            "test", "--input", data.to_str().unwrap(), "--alphas", ALPHAS, "--quantiles", table.to_str().unwrap(),
            "--out-dir", d.to_str().unwrap(),
        ]);
        assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
        passed += (code(&o) == 0) as usize;
    }
    assert!(passed as f64 >= 0.93 * runs as f64, "{passed} of {runs} null runs passed");
}

#[test]
fn estimated_mode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = simulate(d, "data.csv", &["--seed", "4"]);
    let init = simulate(d, "init.csv", &["--seed", "4", "--initial-sample"]);
    assert_ne!(std::fs::read(&data).unwrap(), std::fs::read(&init).unwrap());
    let o = run(&[
        "test", "--input", data.to_str().unwrap(), "--initial", init.to_str().unwrap(), "--M", "3", "--grid", "40",
        "--replicates", "2000", "--out-dir", d.to_str().unwrap(),
    ]);
    assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_echo"]["mode"], "estimated");
    let o = run(&["test", "--input", data.to_str().unwrap(), "--initial", init.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--M"));
}

#[test]
fn malformed_rows_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "xi_1,eta_1,eta_2\n1,2,3\n4,oops,6\n").unwrap();
    let o = run(&["test", "--input", p.to_str().unwrap(), "--alphas", "9"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = run(&["test", "--input", dir.path().join("missing.csv").to_str().unwrap(), "--alphas", "9"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn spec_violations_name_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let p = simulate(dir.path(), "d.csv", &["--n", "40", "--p", "20"]);
    let o = run(&["test", "--input", p.to_str().unwrap(), "--alphas", "4,9,3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("strictly decreasing"), "{}", stderr(&o));
    let o = run(&["test", "--input", p.to_str().unwrap(), "--alphas", "9,1.5,1.2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("subcritical"), "{}", stderr(&o));
    let o = run(&["test", "--input", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_file_precedence_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, "n = 12\np = 3\nseed = 2\n").unwrap();
    let out = d.join("x.csv");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--n", "15", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = data_rows(&out);
    assert_eq!((rows.len(), rows[0].len()), (15, 6));
    std::fs::write(&cfg, "n = 12\ncolour = 3\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
    std::fs::write(&cfg, "deltas = []\n").unwrap();
    let o = run(&["power", "--config", cfg.to_str().unwrap(), "--out-dir", d.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
}

fn read_dir_sorted(d: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(d)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn experiment_artifacts_are_reproducible_across_threads() {
    let base = tempfile::tempdir().unwrap();
    let small = ["--n", "60", "--p", "20", "--replicates", "8", "--seed", "5"];
    for threads in ["1", "3"] {
        let d = base.path().join(threads);
        let ds = d.to_str().unwrap();
        for cmd in [
            vec!["power", "--deltas", "0,5", "--quantile-replicates", "500", "--grid", "30"],
            vec!["power", "--mode", "estimated", "--alternative", "alt3", "--deltas", "0,5", "--quantile-replicates", "300", "--grid", "20"],
            vec!["histogram", "--bins", "5"],
            vec!["validate-kernel"],
        ] {
            let mut a = cmd.clone();
            a.extend_from_slice(&small);
            a.extend_from_slice(&["--threads", threads, "--out-dir", ds]);
            let o = run(&a);
            assert_eq!(code(&o), 0, "{:?}: {}", cmd, stderr(&o));
        }
    }
    let one = read_dir_sorted(&base.path().join("1"));
    let three = read_dir_sorted(&base.path().join("3"));
    let names: Vec<&str> = one.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(
        names,
        [
            "histogram_max.csv",
            "histogram_max.svg",
            "histogram_sum.csv",
            "histogram_sum.svg",
            "kernel_validation.csv",
            "kernel_validation.svg",
            "power_alt1_known.csv",
            "power_alt1_known.svg",
            "power_alt3_estimated.csv",
            "power_alt3_estimated.svg",
        ]
    );
    assert_eq!(one, three);
    for (name, bytes) in &one {
        let text = String::from_utf8_lossy(bytes);
        assert!(text.contains("config_digest: "), "{name} lacks metadata");
    }
}

#[test]
fn quantile_table_for_tiny_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(&[
        "quantiles", "--alphas", "9", "--n", "100", "--p", "50", "--grid", "2", "--replicates", "1000", "--level",
        "0.1,0.05", "--out-dir", d.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("quantiles.json")).unwrap()).unwrap();
    let t = &doc["table"];
    assert_eq!(t["levels"].as_array().unwrap().len(), 2);
    // one spike: both statistics coincide
    assert_eq!(t["q_max"], t["q_sum"]);
    assert_eq!(doc["config_digest"].as_str().unwrap().len(), 64);
}
