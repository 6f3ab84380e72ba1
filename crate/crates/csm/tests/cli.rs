use std::path::Path;
use std::process::{Command, Output};

use csm::formats::Checkpoint;

fn csm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = csm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn fails(args: &[&str]) -> String {
    let out = csm(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

/// Last `tv` value in a training log.
fn final_tv(log: &str) -> f64 {
    let last = log.lines().last().unwrap();
    last.split(',').nth(3).unwrap().parse().unwrap()
}

fn eval_mean(csv: &str) -> f64 {
    let last = csv.lines().last().unwrap();
    let (label, v) = last.split_once(',').unwrap();
    assert_eq!(label, "mean");
    v.parse().unwrap()
}

#[test]
fn uniform_table_scores_log_sixteen() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["train", "--out", out, "--iterations", "0"]);
    ok(&["eval", "--out", out, "--n_samples", "500"]);
    let mean = eval_mean(&read(&dir.path().join("eval.csv")));
    assert!((mean + 16f64.ln()).abs() < 1e-12, "{mean}");
    assert!((mean + 2.7726).abs() < 5e-5);
}

#[test]
fn exact_objective_fits_the_toy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# 1-D toy, exact objective\ndataset = toy_1d\nn_samples = 100000\nstructure = cycle\n\
         objective = csm_exact\niterations = 10000\nlog_every = 1000\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let log = read(&out.join("train_log.csv"));
    assert_eq!(log.lines().next().unwrap(), "level,iteration,objective,tv");
    assert_eq!(log.lines().count(), 11);
    let tv = final_tv(&log);
    assert!(tv < 0.02, "tv {tv}");
    for f in ["checkpoint.bin", "train_timing.csv", "config.resolved", "ground_truth.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let resolved = read(&out.join("config.resolved"));
    assert!(resolved.contains("structure = cycle\n"));
    assert_eq!(read(&out.join("ground_truth.csv")).lines().count(), 16);
}

#[test]
fn reruns_write_identical_logs_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train",
            "--out",
            out.to_str().unwrap(),
            "--objective",
            "csm_mc",
            "--structure",
            "cycle",
            "--model",
            "score_net",
            "--hidden",
            "8",
            "--iterations",
            "200",
            "--log_every",
            "50",
            "--seed",
            "7",
        ]);
        (read(&out.join("train_log.csv")), std::fs::read(out.join("checkpoint.bin")).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    assert_eq!(a.0.lines().count(), 5);
}

#[test]
fn masked_ar_likelihood_reaches_the_entropy_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let common = ["--dataset", "binary_mixture", "--bits", "8", "--n_samples", "20000", "--out", out];
    let mut train = vec!["train", "--model", "masked_ar", "--hidden", "32", "--objective", "nll"];
    train.extend(["--iterations", "3000", "--batch_size", "256", "--lr", "0.01", "--lr_end", "0.001"]);
    train.extend(common);
    ok(&train);
    let mut eval = vec!["eval", "--model", "masked_ar"];
    eval.extend(common);
    ok(&eval);
    let mean = eval_mean(&read(&dir.path().join("eval.csv")));

    // Empirical entropy of the same samples, counted here.
    let data = csm_core::data::gen_binary_mixture(8, 4, 20000, 0).unwrap();
    let mut counts = std::collections::HashMap::new();
    for x in &data.samples {
        *counts.entry(x.clone()).or_insert(0usize) += 1;
    }
    let n = data.len() as f64;
    let entropy: f64 = counts.values().map(|&c| -(c as f64 / n) * (c as f64 / n).ln()).sum();
    assert!(mean <= -entropy + 1e-9, "mean {mean} above the bound {}", -entropy);
    assert!(mean > -entropy - 0.05, "mean {mean}, bound {}", -entropy);
}

#[test]
fn zero_steps_yield_only_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["train", "--out", out, "--iterations", "5"]);
    ok(&["sample", "--out", out, "--steps", "0"]);
    let samples = read(&dir.path().join("samples.csv"));
    assert_eq!(samples.lines().count(), 1);
    let v: usize = samples.trim().parse().unwrap();
    assert!(v < 16);
}

#[test]
fn sampling_is_reproducible_and_writes_a_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("model");
    let args = ["--dataset", "rings", "--bins", "20", "--n_samples", "5000", "--structure", "grid"];
    let mut train = vec!["train", "--out", base.to_str().unwrap(), "--objective", "csm_mc", "--iterations", "300"];
    train.extend(["--lr", "0.05", "--smoothing", "0.05"]);
    train.extend(args);
    ok(&train);
    let ck = base.join("checkpoint.bin");
    let sample = |name: &str| {
        let out = dir.path().join(name);
        let mut a = vec!["sample", "--out", out.to_str().unwrap(), "--checkpoint", ck.to_str().unwrap()];
        a.extend([
            "--chains",
            "4",
            "--steps",
            "200",
            "--burn_in",
            "50",
            "--thin",
            "5",
            "--init",
            "data",
            "--seed",
            "3",
        ]);
        a.extend(args);
        ok(&a);
        out
    };
    let (a, b) = (sample("a"), sample("b"));
    for f in ["samples.csv", "histogram.pgm", "sample_summary.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    // 4 chains x (1 + (200 - 50) / 5) kept states.
    assert_eq!(read(&a.join("samples.csv")).lines().count(), 4 * 31);
    let pgm = read(&a.join("histogram.pgm"));
    assert!(pgm.starts_with("P2\n20 20\n255\n"));
    let pixels: Vec<u32> = pgm.lines().skip(3).flat_map(|l| l.split(' ').map(|v| v.parse::<u32>().unwrap())).collect();
    assert_eq!(pixels.len(), 400);
    assert_eq!(pixels.iter().max(), Some(&255));
    assert!(read(&a.join("sample_summary.csv")).contains("tv_vs_data,"));
}

#[test]
fn checkpoint_header_describes_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&[
        "train",
        "--out",
        out,
        "--objective",
        "dcsm",
        "--noise_w",
        "0.5,0.9",
        "--iterations",
        "20",
        "--batch_size",
        "16",
    ]);
    let ck = Checkpoint::load(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(ck.levels.len(), 2);
    assert_eq!(ck.levels[0].len(), 16);
    assert_eq!(ck.str_field("model"), Some("logit_table"));
    assert_eq!(ck.f64_list("noise_w"), Some(vec![0.5, 0.9]));
    assert_eq!(ck.usize_list("dims"), Some(vec![16]));
    let log = read(&dir.path().join("train_log.csv"));
    assert!(log.lines().any(|l| l.starts_with("1,20,")));
    // Several levels sample by annealing.
    ok(&["sample", "--out", out, "--steps", "30"]);
    assert_eq!(read(&dir.path().join("samples.csv")).lines().count(), 31);
}

#[test]
fn original_ratio_matching_stays_uniform_on_any_data() {
    let dir = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for (name, objective) in
        [("checkerboard", "ratio_original"), ("rings", "ratio_original"), ("checkerboard", "ratio_fixed")]
    {
        let out = dir.path().join(format!("{name}_{objective}"));
        let args = ["--dataset", name, "--bins", "14", "--n_samples", "5000", "--out", out.to_str().unwrap()];
        let mut train = vec!["train", "--objective", objective, "--iterations", "300", "--lr", "0.05"];
        train.extend(args);
        ok(&train);
        let mut eval = vec!["eval"];
        eval.extend(args);
        ok(&eval);
        means.push(eval_mean(&read(&out.join("eval.csv"))));
    }
    let uniform = -(196f64).ln();
    assert!((means[0] - uniform).abs() < 1e-9, "{means:?}");
    assert!((means[1] - uniform).abs() < 1e-9, "{means:?}");
    assert!(means[2] > uniform + 0.3, "{means:?}");
}

#[test]
fn check_suite_reports_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&["check", "--suite", "equivalence", "--out", out]).stdout;
    assert!(String::from_utf8_lossy(&stdout).contains("[PASS]"));
    let csv = read(&dir.path().join("check_equivalence.csv"));
    assert_eq!(csv.lines().next().unwrap(), "suite,name,measured,tolerance,passed");
    assert!(csv.lines().count() > 1);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn errors_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "lr = 0.1\nlearning_rate = 0.1\n").unwrap();
    let err = fails(&["train", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert!(err.contains("line 2") && err.contains("learning_rate"), "{err}");

    let err = fails(&["train", "--out", out, "--objective", "dcsm"]);
    assert!(err.contains("noise_w"), "{err}");

    fails(&["train", "--out", out, "--lr", "fast"]);

    let err = fails(&["sample", "--out", out]);
    assert!(err.contains("checkpoint.bin"), "{err}");

    // A score network cannot be normalized, and its output width is fixed.
    ok(&[
        "train",
        "--out",
        out,
        "--model",
        "score_net",
        "--objective",
        "csm_mc",
        "--structure",
        "cycle",
        "--iterations",
        "3",
    ]);
    let err = fails(&["eval", "--out", out, "--structure", "cycle"]);
    assert!(err.contains("normalized"), "{err}");
    let err = fails(&["sample", "--out", out, "--structure", "complete"]);
    assert!(err.contains("degree mismatch"), "{err}");

    let csv = dir.path().join("ragged.csv");
    std::fs::write(&csv, "0,1,1\n1,0\n").unwrap();
    let err = fails(&["train", "--out", out, "--dataset", "csv", "--dataset_path", csv.to_str().unwrap()]);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn binary_csv_trains_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    std::fs::write(&csv, "a,b,c\n0,1,1\n1,0,0\n0,1,1\n1,1,1\n").unwrap();
    let out = dir.path().join("out");
    let args = [
        "--dataset",
        "csv",
        "--dataset_path",
        csv.to_str().unwrap(),
        "--header",
        "true",
        "--out",
        out.to_str().unwrap(),
    ];
    let mut train = vec!["train", "--model", "masked_ar", "--hidden", "4", "--objective", "nll", "--iterations", "50"];
    train.extend(args);
    ok(&train);
    let mut eval = vec!["eval"];
    eval.extend(args);
    ok(&eval);
    let csv = read(&out.join("eval.csv"));
    assert_eq!(csv.lines().count(), 1 + 4 + 1);
}
