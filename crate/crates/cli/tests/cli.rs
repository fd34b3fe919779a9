use std::path::Path;
use std::process::{Command, Output};

fn overparam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overparam"))
        .args(args)
        .env_remove("OVERPARAM_DATA")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synthetic_plan(dir: &Path, widths: &[usize], seeds: &[u64]) -> String {
    let path = dir.join("plan.in.toml");
    let plan = format!(
        r#"suite = "double-descent"
seeds = {seeds:?}

[data]
dataset = "synthetic"
train_subset = 120
synthetic = {{ train = 200, test = 60, seed = 9 }}

[model]
kind = "mlp"
widths = {widths:?}

[train]
epochs = 2
"#
    );
    std::fs::write(&path, plan).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_and_plot(dir: &Path, widths: &[usize], seeds: &[u64]) -> String {
    let plan = synthetic_plan(dir, widths, seeds);
    let out = dir.join("out");
    let out = out.to_str().unwrap();
    let r = overparam(&["run", &plan, "--out", out]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let p = overparam(&["plot", "double-descent", "--out", out]);
    assert!(p.status.success(), "{}", String::from_utf8_lossy(&p.stderr));
    std::fs::read_to_string(dir.join("out/double-descent.svg")).unwrap()
}

#[test]
fn verify_passes() {
    let o = overparam(&["verify"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("pass ")), "{text}");
}

#[test]
fn missing_dataset_fails_without_writing_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = overparam(&[
        "sweep",
        "double-descent",
        "--out",
        out.to_str().unwrap(),
        "--data-root",
        dir.path().join("nothing-here").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nothing-here"));
    assert!(!out.join("records").exists());
}

#[test]
fn double_descent_chart_is_well_formed_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let svg = run_and_plot(a.path(), &[8, 16, 32], &[0, 1]);
    assert_eq!(svg, run_and_plot(b.path(), &[8, 16, 32], &[0, 1]));

    let doc = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    let dashed: Vec<_> = doc.descendants().filter(|n| n.attribute("stroke-dasharray").is_some()).collect();
    assert_eq!(dashed.len(), 1);
    assert!(doc.descendants().any(|n| n.text() == Some("n = 120")));
    // log axis: decade ticks 1000 and 10k bracket the parameter counts
    let labels: Vec<&str> = doc.descendants().filter_map(|n| n.text()).collect();
    assert!(labels.contains(&"1000") && labels.contains(&"10k"), "{labels:?}");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("path")).count(), 2);

    let again = overparam(&["plot", "--out", a.path().join("out").to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(std::fs::read_to_string(a.path().join("out/double-descent.svg")).unwrap(), svg);
}

#[test]
fn single_point_chart_has_markers_only() {
    let dir = tempfile::tempdir().unwrap();
    let svg = run_and_plot(dir.path(), &[8], &[0]);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 2);
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("path")).count(), 0);
}

#[test]
fn analyze_is_idempotent_and_rerun_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let plan = synthetic_plan(dir.path(), &[8, 16], &[0]);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(overparam(&["run", "--plan", &plan, "--out", out_s]).status.success());
    let csv = std::fs::read(out.join("double-descent.csv")).unwrap();
    let json = std::fs::read(out.join("double-descent.summary.json")).unwrap();

    let rerun = overparam(&["run", &plan, "--out", out_s]);
    assert!(rerun.status.success());
    assert!(stdout(&rerun).contains("0 completed, 2 already present, 0 failed"));

    assert!(overparam(&["analyze", "--out", out_s]).status.success());
    assert_eq!(std::fs::read(out.join("double-descent.csv")).unwrap(), csv);
    assert_eq!(std::fs::read(out.join("double-descent.summary.json")).unwrap(), json);
}

#[test]
fn sweep_prints_its_plan() {
    let o = overparam(&["sweep", "lottery", "--print-plan"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("suite = \"lottery\""));
}

#[test]
fn bad_arguments_are_reported() {
    assert!(!overparam(&["sweep", "no-such-suite"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    assert!(!overparam(&["analyze", "--out", dir.path().to_str().unwrap()]).status.success());
    assert!(!overparam(&["plot", "--out", dir.path().to_str().unwrap()]).status.success());
    let plan = synthetic_plan(dir.path(), &[8], &[0]);
    assert!(!overparam(&["run", &plan, "--seeds", "0"]).status.success());
}
