use overparam_core::data::{synthetic::two_gaussians, Dataset};
use overparam_core::nn::ModelSpec;
use overparam_core::numerics::{streams, RngStream};
use overparam_core::optim::OptimConfig;
use overparam_core::pruning::{
    eligible, lottery_run, magnitude_mask, random_reinit_control, rewind_and_retrain, summarize, LotterySettings,
    PruneError, PruneMask,
};
use overparam_core::train::{train, TrainConfig, TrainOptions};

fn setup() -> (TrainConfig, Dataset) {
    let data = two_gaussians(160, 3.0, &mut RngStream::new(8, 0));
    let cfg = TrainConfig::new(ModelSpec::mlp_with_input(2, 8).with_classes(2), OptimConfig::sgd(16, 3), 21);
    (cfg, data)
}

fn trained_mask(cfg: &TrainConfig, data: &Dataset, fraction: f64) -> (Vec<f32>, PruneMask) {
    let base = train::<f32>(cfg, data, None, TrainOptions::default()).unwrap();
    let e = eligible(base.model.layout());
    (base.theta0.clone(), magnitude_mask(base.model.theta(), &e, fraction, None).unwrap())
}

#[test]
fn rewound_ticket_keeps_masked_weights_at_zero() {
    let (cfg, data) = setup();
    let (theta0, mask) = trained_mask(&cfg, &data, 0.8);
    let out = rewind_and_retrain(&cfg, &theta0, &mask, &data, None).unwrap();
    assert_eq!(out.masked_max_abs, vec![0.0; cfg.optim.epochs]);
    assert!(out.model.theta().iter().zip(&mask.keep).all(|(v, &k)| k || *v == 0.0));
    assert!((mask.remaining_fraction() - 0.2).abs() <= 1.0 / mask.eligible as f64);
}

#[test]
fn all_ones_mask_reproduces_ordinary_training() {
    let (cfg, data) = setup();
    let base = train::<f32>(&cfg, &data, None, TrainOptions::default()).unwrap();
    let e = eligible(base.model.layout());
    let mask = magnitude_mask(base.model.theta(), &e, 0.0, None).unwrap();
    let again = rewind_and_retrain(&cfg, &base.theta0, &mask, &data, None).unwrap();
    assert_eq!(base.model.theta(), again.model.theta());
}

#[test]
fn control_with_the_ticket_stream_is_the_ticket() {
    let (cfg, data) = setup();
    let (theta0, mask) = trained_mask(&cfg, &data, 0.5);
    let ticket = rewind_and_retrain(&cfg, &theta0, &mask, &data, None).unwrap();
    let same = random_reinit_control(&cfg, &mask, &mut RngStream::new(cfg.seed, streams::INIT), &data, None).unwrap();
    assert_eq!(ticket.model.theta(), same.model.theta());
    let fresh = random_reinit_control(&cfg, &mask, &mut RngStream::new(cfg.seed, streams::REINIT), &data, None).unwrap();
    assert_ne!(ticket.theta0, fresh.theta0);
    assert_eq!(fresh.masked_max_abs, vec![0.0; cfg.optim.epochs]);
}

#[test]
fn wrong_snapshot_length_is_rejected() {
    let (cfg, data) = setup();
    let mask = PruneMask::all_ones(3, 3);
    assert!(matches!(rewind_and_retrain(&cfg, &[0.0; 3], &mask, &data, None), Err(PruneError::Length(_))));
}

#[test]
fn sweep_full_row_is_the_baseline() {
    let (cfg, data) = setup();
    let settings = LotterySettings { remaining_pct: vec![100.0, 30.0], rounds: 1, control: true };
    let rec = lottery_run(&cfg, &settings, &data, Some(&data)).unwrap();
    let base = train::<f32>(&cfg, &data, Some(&data), TrainOptions::default()).unwrap();
    assert_eq!(rec.rows[0].ticket_test, base.final_test.map(|e| e.accuracy));
    assert_eq!(rec.rows[0].remaining_fraction, 1.0);
    assert_eq!(rec.rows[1].masked_max_abs, 0.0);
    assert!(rec.rows[1].control_test.is_some());
    let rows = summarize(&[rec.clone(), rec]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].ticket.std, 0.0);
}

#[test]
fn iterative_rounds_end_at_target() {
    let (cfg, data) = setup();
    let settings = LotterySettings { remaining_pct: vec![20.0], rounds: 3, control: false };
    let rec = lottery_run(&cfg, &settings, &data, None).unwrap();
    assert!((rec.rows[0].remaining_fraction - 0.2).abs() < 0.02);
    assert_eq!(rec.rows[0].masked_max_abs, 0.0);
    assert!(matches!(
        lottery_run(&cfg, &LotterySettings { remaining_pct: vec![0.0], rounds: 1, control: false }, &data, None),
        Err(PruneError::Percent(_))
    ));
}
