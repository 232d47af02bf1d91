//! End-to-end tests of the `margscore` binary: every subcommand runs against
//! real files in temporary directories, and the stable exit-code contract
//! (0 success, 2 config error, 3 numerical failure) is checked directly.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_margscore"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    serde_json::from_str(&text).expect("valid JSON")
}

fn final_trace_objective(path: &Path) -> f64 {
    let text = std::fs::read_to_string(path).expect("trace exists");
    let last = text.lines().last().expect("nonempty trace");
    last.split(',').nth(1).expect("objective column").parse().expect("number")
}

/// Generates a small star-graph dataset and returns (dir, data, truth_adj).
fn gen_star(dir: &Path, d: usize, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let out = dir.join("gen");
    run_ok(&[
        "gen",
        "star",
        "--d",
        &d.to_string(),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path_str(&out),
    ]);
    (out.join("data.csv"), out.join("truth_adjacency.csv"))
}

#[test]
fn gen_corrupt_fit_pipeline_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = gen_star(dir.path(), 5, 200, 3);
    let cor = dir.path().join("cor");
    run_ok(&[
        "corrupt",
        "--data",
        path_str(&data),
        "--p",
        "0.2",
        "--seed",
        "4",
        "--out",
        path_str(&cor),
    ]);
    let manifest = read_json(&cor.join("manifest.json"));
    let realized = manifest["details"]["realized_missing_fraction"]
        .as_f64()
        .expect("realized fraction recorded");
    assert!(
        (0.1..=0.3).contains(&realized),
        "realized fraction {realized} far from 0.2"
    );
    assert!(manifest["config_hash"]
        .as_str()
        .unwrap()
        .starts_with("sha256:"));
    assert_eq!(manifest["config"]["missing"]["kind"], "mcar");

    let fit = dir.path().join("fit");
    run_ok(&[
        "fit",
        "--data",
        path_str(&cor.join("masked.csv")),
        "--method",
        "zeroed",
        "--iters",
        "40",
        "--out",
        path_str(&fit),
    ]);
    let params = read_json(&fit.join("params.json"));
    assert_eq!(params["model"], "gaussian");
    assert_eq!(params["mu"].as_array().unwrap().len(), 5);
    assert!(fit.join("trace.csv").exists());
    let fit_manifest = read_json(&fit.join("manifest.json"));
    assert!(fit_manifest["details"]["final_objective"].is_number());
}

#[test]
fn corrupt_with_p_zero_copies_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    run_ok(&[
        "gen",
        "random-gaussian",
        "--d",
        "3",
        "--n",
        "50",
        "--seed",
        "1",
        "--out",
        path_str(&gen),
    ]);
    let cor = dir.path().join("cor");
    run_ok(&[
        "corrupt",
        "--data",
        path_str(&gen.join("data.csv")),
        "--p",
        "0",
        "--out",
        path_str(&cor),
    ]);
    let original = std::fs::read(gen.join("data.csv")).unwrap();
    let masked = std::fs::read(cor.join("masked.csv")).unwrap();
    assert_eq!(original, masked, "p=0 must be an identity copy");
}

#[test]
fn fully_observed_zeroed_and_iw_agree_on_final_loss() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    run_ok(&[
        "gen",
        "random-gaussian",
        "--d",
        "3",
        "--n",
        "80",
        "--seed",
        "7",
        "--out",
        path_str(&gen),
    ]);
    let data = gen.join("data.csv");
    let common = [
        "--data",
        path_str(&data),
        "--iters",
        "60",
        "--batch",
        "200",
        "--lr",
        "0.01",
    ];
    let zeroed_out = dir.path().join("zeroed");
    let mut args = vec!["fit", "--method", "zeroed"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--out", path_str(&zeroed_out)]);
    run_ok(&args);
    let iw_out = dir.path().join("iw");
    let mut args = vec!["fit", "--method", "iw", "--r", "4"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--out", path_str(&iw_out)]);
    run_ok(&args);
    let a = final_trace_objective(&zeroed_out.join("trace.csv"));
    let b = final_trace_objective(&iw_out.join("trace.csv"));
    assert!(
        (a - b).abs() <= 1e-6,
        "final losses diverge on fully observed data: {a} vs {b}"
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[fit]\nmethod = \"zeroed\"\nbogus_key = 1\n").unwrap();
    let (code, stderr) = run_code(&[
        "fit",
        "--data",
        "nonexistent.csv",
        "--config",
        path_str(&config),
    ]);
    assert_eq!(code, 2, "config errors exit 2; stderr: {stderr}");
    assert!(stderr.contains("unknown field"), "stderr: {stderr}");
}

#[test]
fn reruns_are_idempotent_except_manifest_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let args_for = |out: &Path| {
        [
            "gen".to_string(),
            "star".into(),
            "--d".into(),
            "4".into(),
            "--n".into(),
            "60".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            path_str(out).into(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let args: Vec<String> = args_for(out).into();
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        run_ok(&args);
    }
    for file in ["data.csv", "truth.json", "truth_adjacency.csv"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
    let strip = |path: &Path| {
        let mut m = read_json(path);
        let obj = m.as_object_mut().unwrap();
        obj.remove("created_unix");
        obj.remove("wall_time_s");
        m
    };
    assert_eq!(
        strip(&a.join("manifest.json")),
        strip(&b.join("manifest.json")),
        "manifests differ beyond timing fields"
    );
}

#[test]
fn ggm_with_truth_reports_auc_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = gen_star(dir.path(), 6, 300, 5);
    let cor = dir.path().join("cor");
    run_ok(&[
        "corrupt",
        "--data",
        path_str(&data),
        "--p",
        "0.2",
        "--out",
        path_str(&cor),
    ]);
    let out = dir.path().join("ggm");
    run_ok(&[
        "ggm",
        "--data",
        path_str(&cor.join("masked.csv")),
        "--truth",
        path_str(&truth),
        "--lambda1-max",
        "2",
        "--lambda1-count",
        "8",
        "--warmup-iters",
        "60",
        "--iters-per-level",
        "10",
        "--out",
        path_str(&out),
    ]);
    let auc = read_json(&out.join("auc.json"))["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc), "AUC {auc} out of range");
    let path_lines = std::fs::read_to_string(out.join("path.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(path_lines, 9, "header + one row per level");
    let adjacencies = std::fs::read_dir(out.join("adjacencies")).unwrap().count();
    assert_eq!(adjacencies, 8);
}

#[test]
fn ggm_without_truth_scores_against_reference_densities() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = gen_star(dir.path(), 6, 300, 9);
    let cor = dir.path().join("cor");
    run_ok(&[
        "corrupt",
        "--data",
        path_str(&data),
        "--p",
        "0.2",
        "--out",
        path_str(&cor),
    ]);
    let out = dir.path().join("ggm");
    run_ok(&[
        "ggm",
        "--data",
        path_str(&cor.join("masked.csv")),
        "--full-data",
        path_str(&data),
        "--lambda1-max",
        "2",
        "--lambda1-count",
        "10",
        "--warmup-iters",
        "60",
        "--iters-per-level",
        "10",
        "--out",
        path_str(&out),
    ]);
    let report = read_json(&out.join("auc.json"));
    let mean = report["mean_auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean), "mean AUC {mean} out of range");
    assert_eq!(report["aucs"].as_array().unwrap().len(), 5);
    assert_eq!(report["densities"].as_array().unwrap().len(), 5);
}

#[test]
fn ggm_auto_threshold_reports_its_choice() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = gen_star(dir.path(), 5, 250, 13);
    let out = dir.path().join("ggm");
    run_ok(&[
        "ggm",
        "--data",
        path_str(&data),
        "--truth",
        path_str(&truth),
        "--lambda1-max",
        "2",
        "--lambda1-count",
        "8",
        "--warmup-iters",
        "60",
        "--auto-threshold",
        "--out",
        path_str(&out),
    ]);
    let report = read_json(&out.join("auc.json"));
    let threshold = report["auto_threshold"].as_f64().unwrap();
    assert!(
        (1e-6..=1.0).contains(&threshold),
        "threshold {threshold} outside searched range"
    );
    assert_eq!(report["jumpiness_level"].as_f64().unwrap(), 0.05);
}

#[test]
fn numerical_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let trunc = dir.path().join("trunc.toml");
    std::fs::write(
        &trunc,
        "kind = \"half-space\"\nnormal = [1.0, 0.0]\noffset = 50.0\n",
    )
    .unwrap();
    let (code, stderr) = run_code(&[
        "gen",
        "random-gaussian",
        "--d",
        "2",
        "--n",
        "50",
        "--truncation",
        path_str(&trunc),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(code, 3, "rejection budget is a numerical failure; stderr: {stderr}");
    assert!(stderr.contains("rejection"), "stderr: {stderr}");
}

#[test]
fn variational_variant_flags_are_wired() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = gen_star(dir.path(), 4, 80, 17);
    let cor = dir.path().join("cor");
    run_ok(&[
        "corrupt",
        "--data",
        path_str(&data),
        "--p",
        "0.3",
        "--out",
        path_str(&cor),
    ]);
    let masked = cor.join("masked.csv");
    let small = [
        "--iters",
        "6",
        "--inner-steps",
        "2",
        "--r",
        "3",
        "--hidden",
        "8",
    ];
    for (label, extra) in [
        ("sliced", vec!["--sliced", "basis"]),
        ("denoised", vec!["--denoise-levels", "0.3,0.6"]),
    ] {
        let out = dir.path().join(label);
        let mut args = vec!["fit", "--data", path_str(&masked), "--method", "var"];
        args.extend_from_slice(&small);
        args.extend_from_slice(&extra);
        args.extend_from_slice(&["--out", path_str(&out)]);
        run_ok(&args);
        assert!(out.join("variational.json").exists());
        assert!(out.join("phi_loss.csv").exists());
    }
}

#[test]
fn zeroed_rejects_variational_only_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = gen_star(dir.path(), 4, 60, 19);
    let (code, stderr) = run_code(&[
        "fit",
        "--data",
        path_str(&data),
        "--method",
        "zeroed",
        "--sliced",
        "basis",
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn repro_star_desk_tiny_emits_plot_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("star.toml");
    std::fs::write(
        &config,
        "[repro.star]\nd = 5\nn = 100\nmissing_ps = [0.3]\nreps = 1\nlevels = 4\n\
         warmup_iters = 10\niters_per_level = 4\nr = 3\nhidden = 8\ninner_steps = 2\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "repro",
        "star-desk",
        "--config",
        path_str(&config),
        "--out",
        path_str(&out),
    ]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x,method,mean,ci_half_width,reps",
        "summary header"
    );
    assert_eq!(lines.count(), 2, "one row per (level, method) cell");
    assert!(out.join("plot_data.csv").exists());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["suite"], "star-desk");
}
