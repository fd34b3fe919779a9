use std::fs;
use std::path::Path;

use overparam_runner::plan::{ExtraOptimizer, LandscapeSection, NtkSection, SyntheticSpec};
use overparam_runner::{analyze_store, run_plan, summarize, DatasetKind, ExperimentPlan, RunOptions, RunnerError, Store, Suite};

fn tiny(suite: Suite) -> ExperimentPlan {
    let mut plan = ExperimentPlan::desk_default(suite);
    plan.seeds = vec![0, 1];
    plan.data.dataset = DatasetKind::Synthetic;
    plan.data.synthetic = Some(SyntheticSpec { train: 300, test: 100, seed: 4 });
    plan.data.train_subset = Some(200);
    plan.model.widths = vec![8, 16];
    plan.train.epochs = 2;
    plan.train.eval_every = 1;
    if plan.train.batch_sizes.len() > 2 {
        plan.train.batch_sizes = vec![16, 64];
    }
    if let Some(l) = plan.landscape.as_mut() {
        *l = LandscapeSection { iterations: 5, sigmas: vec![0.002, 0.005], samples_per_sigma: 2, hessian_subset: 50 };
    }
    plan
}

fn opts(out: &Path) -> RunOptions {
    RunOptions { out: out.to_path_buf(), data_root: out.join("no-data"), jobs: 1, force: false }
}

fn quiet(_: overparam_runner::Progress<'_>) {}

fn record_texts(out: &Path) -> Vec<String> {
    Store::new(out).load_all().unwrap().iter().map(|r| r.reproducible_json()).collect()
}

#[test]
fn every_cell_gets_one_record_and_reruns_are_no_ops() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny(Suite::DoubleDescent);
    let first = run_plan(&plan, &opts(dir.path()), &quiet).unwrap();
    assert_eq!(first.completed.len(), 4);
    assert!(first.ok());
    let again = run_plan(&plan, &opts(dir.path()), &quiet).unwrap();
    assert_eq!((again.completed.len(), again.skipped.len()), (0, 4));
}

#[test]
fn resume_completes_only_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny(Suite::DoubleDescent);
    run_plan(&plan, &opts(dir.path()), &quiet).unwrap();
    let before = record_texts(dir.path());
    let victim = plan.cells()[2].id();
    fs::remove_file(Store::new(dir.path()).path_for(&victim)).unwrap();
    let resumed = run_plan(&plan, &opts(dir.path()), &quiet).unwrap();
    assert_eq!(resumed.completed, vec![victim]);
    assert_eq!(resumed.skipped.len(), 3);
    assert_eq!(record_texts(dir.path()), before);
}

#[test]
fn records_are_identical_across_directories_and_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let plan = tiny(Suite::DoubleDescent);
    run_plan(&plan, &opts(a.path()), &quiet).unwrap();
    run_plan(&plan, &RunOptions { jobs: 3, ..opts(b.path()) }, &quiet).unwrap();
    assert_eq!(record_texts(a.path()), record_texts(b.path()));
    let forced = run_plan(&plan, &RunOptions { force: true, ..opts(a.path()) }, &quiet).unwrap();
    assert_eq!(forced.completed.len(), 4);
    assert_eq!(record_texts(a.path()), record_texts(b.path()));
}

#[test]
fn missing_dataset_fails_before_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = tiny(Suite::DoubleDescent);
    plan.data.dataset = DatasetKind::Mnist;
    plan.data.synthetic = None;
    let err = run_plan(&plan, &opts(dir.path()), &quiet).unwrap_err();
    assert!(matches!(err, RunnerError::Data { .. }), "{err}");
    assert!(!Store::new(dir.path()).records_dir().exists());
}

#[test]
fn analyze_is_idempotent_and_rejects_malformed_records() {
    let dir = tempfile::tempdir().unwrap();
    run_plan(&tiny(Suite::DoubleDescent), &opts(dir.path()), &quiet).unwrap();
    let store = Store::new(dir.path());
    let files = analyze_store(&store).unwrap();
    let snapshot: Vec<String> = files.iter().map(|f| fs::read_to_string(f).unwrap()).collect();
    analyze_store(&store).unwrap();
    assert_eq!(snapshot, files.iter().map(|f| fs::read_to_string(f).unwrap()).collect::<Vec<_>>());
    let csv = &snapshot[0];
    assert!(csv.starts_with("width,params,params_per_sample,"));
    assert_eq!(csv.lines().count(), 3);

    fs::write(store.records_dir().join("broken.json"), "{\"schema\": 1").unwrap();
    assert!(matches!(analyze_store(&store), Err(RunnerError::Record { .. })));
}

#[test]
fn tampered_config_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny(Suite::DoubleDescent);
    run_plan(&plan, &opts(dir.path()), &quiet).unwrap();
    let store = Store::new(dir.path());
    let path = store.path_for(&plan.cells()[0].id());
    let text = fs::read_to_string(&path).unwrap().replacen("\"epochs\": 2", "\"epochs\": 3", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(store.load_all(), Err(RunnerError::Record { .. })));
}

#[test]
fn implicit_reg_with_landscape_and_extra_optimizers() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = tiny(Suite::ImplicitReg);
    plan.model.widths = vec![8];
    plan.train.extra = vec![ExtraOptimizer::Adam, ExtraOptimizer::FullBatchGd];
    plan.landscape = Some(LandscapeSection { iterations: 4, sigmas: vec![0.01], samples_per_sigma: 2, hessian_subset: 40 });
    let report = run_plan(&plan, &opts(dir.path()), &quiet).unwrap();
    assert_eq!(report.completed.len(), 4 * 2);
    let records = Store::new(dir.path()).load_all().unwrap();
    let s = summarize(Suite::ImplicitReg, &records);
    assert_eq!(s.groups.len(), 4);
    assert!(s.groups.iter().all(|g| g.lambda_max.is_some() && g.loss_increase.len() == 1));
    assert_eq!(s.groups[3].train_size, 200);
    let cmp = s.batch_comparison.clone().unwrap();
    assert_eq!((cmp.a.as_str(), cmp.b.as_str()), ("mlp w=8 sgd bs=16", "mlp w=8 sgd bs=64"));
    let csv = s.to_csv();
    assert!(csv.lines().next().unwrap().ends_with("lambda_max_mean,lambda_max_std,loss_increase_sigma_0.01"));
}

#[test]
fn ntk_and_lottery_suites_attach_their_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let mut ntk = tiny(Suite::NtkSweep);
    ntk.ntk = Some(NtkSection { kernel_probes: 4 });
    run_plan(&ntk, &opts(dir.path()), &quiet).unwrap();
    let mut lottery = tiny(Suite::Lottery);
    lottery.model.widths = vec![8];
    run_plan(&lottery, &opts(dir.path()), &quiet).unwrap();

    let records = Store::new(dir.path()).load_all().unwrap();
    let n = summarize(Suite::NtkSweep, &records);
    assert!(n.groups.iter().all(|g| g.delta_rel.is_some() && g.kernel_drift.is_some()));
    assert!(n.movement_slope.is_some());
    let l = summarize(Suite::Lottery, &records);
    assert_eq!(l.lottery.len(), 4);
    assert_eq!(l.lottery[0].row.remaining_pct, 100.0);
    assert!(records.iter().filter_map(|r| r.lottery.as_ref()).flat_map(|r| &r.rows).all(|r| r.masked_max_abs == 0.0));
    assert_eq!(analyze_store(&Store::new(dir.path())).unwrap().len(), 4);
}
