use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use utilgate::records::parse_table;
use utilgate::utct;
use utilgate_core::{CalibrationRow, CalibrationTable, LabelBatch, LogitsBatch, MetricKind, SweepEcho, Tensor};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_utilgate")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "utilgate {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn scene(dir: &Path, seed: u64) -> (String, String, String) {
    let (x, y, m) = (p(dir, &format!("x{seed}.utct")), p(dir, &format!("y{seed}.utct")), p(dir, &format!("m{seed}.utct")));
    ok(&["synth", "scene", "--height", "32", "--width", "32", "--classes", "3", "--shapes", "3", "--seed", &seed.to_string(), "--logits-out", &x, "--labels-out", &y, "--importance-out", &m]);
    (x, y, m)
}

fn value_of(record: &str) -> f64 {
    record
        .lines()
        .find_map(|l| l.strip_prefix("value="))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn zero_sigma_keeps_payload() {
    let dir = tempfile::tempdir().unwrap();
    let (x, _, _) = scene(dir.path(), 1);
    let out = p(dir.path(), "out.utct");
    let line = ok(&["perturb", "--logits", &x, "--sigma", "0", "--seed", "9", "--out", &out]);
    assert_eq!(line, "mode=global sigma_eff=0 touched=0\n");
    assert_eq!(fs::read(&x).unwrap()[32..], fs::read(&out).unwrap()[32..]);
}

#[test]
fn perturb_summary_counts_touched_elements() {
    let dir = tempfile::tempdir().unwrap();
    let (x, _, m) = scene(dir.path(), 2);
    let out = p(dir.path(), "out.utct");
    let line = ok(&["perturb", "--logits", &x, "--sigma", "1.5", "--delta", "2", "--seed", "1", "--out", &out]);
    assert_eq!(line, format!("mode=global sigma_eff=3 touched={}\n", 3 * 32 * 32));
    let line = ok(&["perturb", "--logits", &x, "--sigma", "1", "--seed", "1", "--mask", &m, "--tau", "0.5", "--out", &out]);
    let touched: usize = line.trim().rsplit('=').next().unwrap().parse().unwrap();
    assert!(line.starts_with("mode=region sigma_eff=1 ") && touched > 0 && touched < 3 * 32 * 32, "{line}");
    let inverted = ok(&["perturb", "--logits", &x, "--sigma", "1", "--seed", "1", "--mask", &m, "--invert-mask", "--out", &out]);
    let touched_inv: usize = inverted.trim().rsplit('=').next().unwrap().parse().unwrap();
    assert_eq!(touched + touched_inv, 3 * 32 * 32);
}

#[test]
fn region_without_mask_is_flag_error() {
    let dir = tempfile::tempdir().unwrap();
    let (x, _, _) = scene(dir.path(), 3);
    let out = run(&["perturb", "--logits", &x, "--sigma", "1", "--seed", "1", "--mode", "region", "--out", &p(dir.path(), "o.utct")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--mask"));
    assert!(out.stdout.is_empty());
    let out = run(&["perturb", "--logits", &x, "--sigma", "1", "--seed", "1", "--mode", "targeted-flip", "--out", &p(dir.path(), "o.utct")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--labels"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(&["solve", "--fit", "x", "--target", "0.5", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["perturb", "--sigma", "1"]).status.code(), Some(2));
    assert_eq!(run(&["perturb", "--logits", &p(d, "missing.utct"), "--sigma", "1", "--seed", "0", "--out", &p(d, "o")]).status.code(), Some(3));
    fs::write(p(d, "junk.utct"), b"not a tensor at all, clearly not").unwrap();
    assert_eq!(run(&["perturb", "--logits", &p(d, "junk.utct"), "--sigma", "1", "--seed", "0", "--out", &p(d, "o")]).status.code(), Some(3));
    assert_eq!(run(&["perturb", "--logits", &p(d, "junk.utct"), "--sigma", "-1", "--seed", "0", "--out", &p(d, "o")]).status.code(), Some(2));

    // a 16x16 mask against 32x32 logits
    let (x, _, _) = scene(d, 4);
    let small = p(d, "small.utct");
    utct::save(&Tensor::from_f32(vec![16, 16], vec![1.0; 256]).unwrap(), &small).unwrap();
    assert_eq!(run(&["perturb", "--logits", &x, "--sigma", "1", "--seed", "0", "--mask", &small, "--out", &p(d, "o")]).status.code(), Some(4));
    let labels = p(d, "labels.utct");
    utct::save(&Tensor::from_i32(vec![4], vec![0, 1, 2, 0]).unwrap(), &labels).unwrap();
    assert_eq!(run(&["eval", "--pred", &x, "--truth", &labels, "--metric", "acc"]).status.code(), Some(4));
    fs::write(p(d, "fit.txt"), "family=cubic\n").unwrap();
    assert_eq!(run(&["solve", "--fit", &p(d, "fit.txt"), "--target", "0.5"]).status.code(), Some(3));
}

#[test]
fn eval_perfect_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y, _) = scene(dir.path(), 5);
    let record = ok(&["eval", "--pred", &y, "--truth", &y, "--metric", "miou"]);
    assert!(record.starts_with("metric_kind=miou\nvalue=1.000000000\nsample_count=1024\nper_class="), "{record}");
    let from_logits = ok(&["eval", "--pred", &x, "--truth", &y, "--metric", "acc"]);
    assert!(value_of(&from_logits) > 0.99);
}

#[test]
fn scene_pipeline_noise_lowers_miou() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (mut clean, mut noisy) = (0.0, 0.0);
    for seed in 0..20u64 {
        let (x, y, _) = scene(d, 100 + seed);
        let out = p(d, "noisy.utct");
        ok(&["perturb", "--logits", &x, "--sigma", "1.0", "--seed", &seed.to_string(), "--out", &out]);
        clean += value_of(&ok(&["eval", "--pred", &x, "--truth", &y, "--metric", "miou"]));
        noisy += value_of(&ok(&["eval", "--pred", &out, "--truth", &y, "--metric", "miou"]));
    }
    assert!(noisy < clean, "{noisy} vs {clean}");
}

#[test]
fn calibrate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (x, y) = (p(d, "x.utct"), p(d, "y.utct"));
    ok(&["synth", "blobs", "--classes", "10", "--samples-per-class", "50", "--separation", "4", "--seed", "2", "--logits-out", &x, "--labels-out", &y]);
    let clean = value_of(&ok(&["eval", "--pred", &x, "--truth", &y, "--metric", "acc"]));

    // grid [0]: every row is the clean metric
    let zero = p(d, "zero.txt");
    assert_eq!(ok(&["calibrate", "--logits", &x, "--labels", &y, "--metric", "acc", "--grid", "0", "--trials", "4", "--seed", "1", "--out", &zero]), "");
    let table = parse_table(&fs::read_to_string(&zero).unwrap()).unwrap();
    assert_eq!(table.rows().len(), 4);
    assert!(table.rows().iter().all(|r| (r.value - clean).abs() < 1e-9));

    // same flags twice: identical bytes
    let (a, b, summary) = (p(d, "a.txt"), p(d, "b.txt"), p(d, "s.txt"));
    let args = |out: &str| {
        vec![
            "calibrate", "--logits", &x, "--labels", &y, "--metric", "acc", "--grid", "0.5,2,8,32", "--trials", "30", "--seed", "6",
            "--out", out,
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    let mut with_summary = args(&a);
    with_summary.extend(["--summary-out".to_string(), summary.clone()]);
    ok(&with_summary.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("# utilgate calibration metric=acc mode=global trials=30 base_seed=6 delta=1 mask=none\nsigma,trial,metric_value\n"));
    let summary = fs::read_to_string(&summary).unwrap();
    assert!(text.ends_with(&format!("# summary\n{summary}")));

    // means fall with sigma
    let means: Vec<f64> = parse_table(&text).unwrap().summary().iter().map(|s| s.mean).collect();
    assert_eq!(means.len(), 5);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

fn exact_table(a: f64, b: f64, c: f64) -> CalibrationTable {
    let rows = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0]
        .into_iter()
        .map(|sigma| CalibrationRow { sigma, trial: 0, value: a * (-b * sigma).exp() + c })
        .collect();
    CalibrationTable::from_rows(SweepEcho::new(MetricKind::Miou, 1), rows).unwrap()
}

#[test]
fn fit_and_solve_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (table, fit) = (p(d, "table.txt"), p(d, "fit.txt"));
    fs::write(&table, utilgate::records::format_table(&exact_table(0.85, 1.3, 0.10))).unwrap();
    let line = ok(&["fit", "--table", &table, "--family", "exp", "--out", &fit]);
    assert!(line.starts_with("family=exp a=0.85"), "{line}");
    let rmse: f64 = line.trim().rsplit("rmse=").next().unwrap().parse().unwrap();
    assert!(rmse < 1e-6, "{rmse}");

    let at_zero = fs::read_to_string(&fit)
        .unwrap()
        .lines()
        .find_map(|l| l.strip_prefix("metric_at_zero=").map(String::from))
        .unwrap();
    assert_eq!(ok(&["solve", "--fit", &fit, "--target", &at_zero]), "sigma=0 clamp=above_max\n");
    assert_eq!(ok(&["solve", "--fit", &fit, "--target", "0.97"]), "sigma=0 clamp=above_max\n");
    assert_eq!(ok(&["solve", "--fit", &fit, "--target", "0.05"]), "sigma=24 clamp=below_floor\n");
    let line = ok(&["solve", "--fit", &fit, "--target", "0.3357"]);
    let sigma: f64 = line.strip_prefix("sigma=").unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!((sigma - 0.98668).abs() < 1e-4 && line.ends_with(" clamp=none\n"), "{line}");
    assert_eq!(run(&["solve", "--fit", &fit, "--target", "1.5"]).status.code(), Some(2));

    let auto = p(d, "auto.txt");
    assert!(ok(&["fit", "--table", &table, "--family", "auto", "--out", &auto]).starts_with("family=exp "));
    let iso = p(d, "iso.txt");
    assert!(ok(&["fit", "--table", &table, "--family", "isotonic", "--out", &iso]).starts_with("family=isotonic points=9 "));
}

#[test]
fn tier_policy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (table, fit, policy) = (p(d, "table.txt"), p(d, "fit.txt"), p(d, "policy.txt"));
    fs::write(&table, utilgate::records::format_table(&exact_table(0.8, 0.9, 0.1))).unwrap();
    ok(&["fit", "--table", &table, "--family", "exp", "--out", &fit]);
    ok(&["tier", "init", "--fit", &fit, "--metric", "acc", "--tiers", "free=0.4,basic=0.6,premium=0.95", "--seed", "3", "--out", &policy]);
    let text = fs::read_to_string(&policy).unwrap();
    assert!(text.starts_with("metric_kind=acc\nbase_seed=3\n\n[fit]\nfamily=exp\n"));
    assert!(text.ends_with("[tiers]\nfree=0.4\nbasic=0.6\npremium=0.95\n"));

    let resolve = |tier: &str| ok(&["tier", "resolve", "--policy", &policy, "--tier", tier]);
    assert!(resolve("premium").ends_with("clamp=above_max\n"));
    assert!(resolve("premium").starts_with("tier=premium sigma=0 "));
    let sigma = |line: String| -> f64 { line.split(' ').nth(1).unwrap()["sigma=".len()..].parse().unwrap() };
    assert!(sigma(resolve("free")) > sigma(resolve("basic")));

    let out = run(&["tier", "resolve", "--policy", &policy, "--tier", "gold"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gold"));
    fs::write(&policy, text.replace("base_seed=3", "base_seed=3\nowner=me")).unwrap();
    assert_eq!(run(&["tier", "resolve", "--policy", &policy, "--tier", "free"]).status.code(), Some(3));
    assert_eq!(
        run(&["tier", "init", "--fit", &fit, "--metric", "acc", "--tiers", "a=0.6,b=0.4", "--seed", "3", "--out", &policy]).status.code(),
        Some(2)
    );
}

#[test]
fn tier_apply_is_reproducible_per_request() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (x, y) = (p(d, "x.utct"), p(d, "y.utct"));
    ok(&["synth", "blobs", "--classes", "4", "--samples-per-class", "10", "--seed", "1", "--logits-out", &x, "--labels-out", &y]);
    let (table, fit, policy) = (p(d, "table.txt"), p(d, "fit.txt"), p(d, "policy.txt"));
    fs::write(&table, utilgate::records::format_table(&exact_table(0.8, 0.9, 0.1))).unwrap();
    ok(&["fit", "--table", &table, "--out", &fit]);
    ok(&["tier", "init", "--fit", &fit, "--metric", "acc", "--tiers", "free=0.4", "--seed", "3", "--out", &policy]);
    let apply = |id: &str, out: &str| ok(&["tier", "apply", "--policy", &policy, "--tier", "free", "--logits", &x, "--request-id", id, "--out", out]);
    let (a, b, c) = (p(d, "a.utct"), p(d, "b.utct"), p(d, "c.utct"));
    let line = apply("7", &a);
    assert!(line.starts_with("tier=free sigma=") && line.ends_with(" clamp=none\n"));
    apply("7", &b);
    apply("8", &c);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let before = LogitsBatch::from_tensor(utct::load(&x).unwrap()).unwrap();
    let after = LogitsBatch::from_tensor(utct::load(&a).unwrap()).unwrap();
    assert_eq!(before.layout(), after.layout());
}

#[test]
fn synth_outputs_load() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = (p(dir.path(), "x.utct"), p(dir.path(), "y.utct"));
    assert_eq!(ok(&["synth", "blobs", "--classes", "3", "--samples-per-class", "5", "--seed", "4", "--logits-out", &x, "--labels-out", &y]), "");
    let logits = LogitsBatch::from_tensor(utct::load(&x).unwrap()).unwrap();
    let labels = LabelBatch::from_tensor(utct::load(&y).unwrap()).unwrap();
    assert_eq!((logits.positions(), logits.classes(), labels.len()), (15, 3, 15));
    assert_eq!(run(&["synth", "scene", "--height", "8", "--seed", "1", "--logits-out", &x, "--labels-out", &y]).status.code(), Some(2));
}
