//! The training loop shared by every experiment.

use serde::{Deserialize, Serialize};

use crate::data::{BatchPlan, Dataset};
use crate::nn::{Evaluation, Mode, ModelError, ModelSpec, ModelState};
use crate::numerics::{streams, RngStream, Scalar};
use crate::optim::{Algorithm, OptimConfig, OptimError, Optimizer};

/// One fully specified training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub optim: OptimConfig,
    pub seed: u64,
    /// Full train/test evaluation every this many epochs (0: final epoch only).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_eval_every() -> usize {
    1
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("{0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Size-weighted mean of the mini-batch losses seen during the epoch.
    #[serde(with = "crate::numerics::float_serde")]
    pub batch_loss: f64,
    pub train: Option<Evaluation>,
    pub test: Option<Evaluation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub step: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F: Scalar> {
    pub model: ModelState<F>,
    pub theta0: Vec<F>,
    pub history: Vec<EpochMetrics>,
    pub final_train: Evaluation,
    pub final_test: Option<Evaluation>,
    pub divergence: Option<Divergence>,
    /// Largest `|θᵢ|` over masked coordinates at the end of each epoch.
    pub masked_max_abs: Vec<f64>,
}

/// Optional hooks for a run: a starting model, a pruning mask (`true` =
/// keep) and a per-epoch observer.
pub struct TrainOptions<'a, F: Scalar> {
    pub initial: Option<ModelState<F>>,
    pub mask: Option<&'a [bool]>,
    pub on_epoch: Option<&'a mut dyn FnMut(usize, &ModelState<F>)>,
}

impl<F: Scalar> Default for TrainOptions<'_, F> {
    fn default() -> Self {
        Self { initial: None, mask: None, on_epoch: None }
    }
}

impl TrainConfig {
    pub fn new(model: ModelSpec, optim: OptimConfig, seed: u64) -> Self {
        Self { model, optim, seed, eval_every: 1 }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.optim.validate()?;
        Ok(())
    }

    /// Fresh initialization for this config's seed.
    pub fn build<F: Scalar>(&self) -> Result<ModelState<F>, ModelError> {
        ModelState::build(&self.model, &mut RngStream::new(self.seed, streams::INIT))
    }
}

fn apply_mask<F: Scalar>(values: &mut [F], keep: &[bool]) {
    for (v, &k) in values.iter_mut().zip(keep) {
        if !k {
            *v = F::zero();
        }
    }
}

fn masked_max<F: Scalar>(theta: &[F], keep: &[bool]) -> f64 {
    theta.iter().zip(keep).filter(|(_, &k)| !k).map(|(v, _)| v.as_f64().abs()).fold(0.0, f64::max)
}

pub fn train<F: Scalar>(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    opts: TrainOptions<'_, F>,
) -> Result<TrainOutcome<F>, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Mismatch("empty training set".into()));
    }
    if train_set.features() != cfg.model.input_len() {
        return Err(TrainError::Mismatch(format!(
            "dataset has {} features, model expects {}",
            train_set.features(),
            cfg.model.input_len()
        )));
    }
    let TrainOptions { initial, mask, mut on_epoch } = opts;
    let mut model = match initial {
        Some(m) if m.spec() == &cfg.model => m,
        Some(_) => return Err(TrainError::Mismatch("initial model does not match the config spec".into())),
        None => cfg.build()?,
    };
    if let Some(keep) = mask {
        if keep.len() != model.num_params() {
            return Err(TrainError::Mismatch(format!(
                "mask has {} entries for {} parameters",
                keep.len(),
                model.num_params()
            )));
        }
        apply_mask(model.theta_mut(), keep);
    }
    let theta0 = model.theta().to_vec();
    let mut opt = Optimizer::<F>::for_config(&cfg.optim, model.num_params());
    let full_batch = cfg.optim.algorithm == Algorithm::FullBatchGd;
    let bs = if full_batch { train_set.len() } else { cfg.optim.batch_size };
    let plan = BatchPlan::new(cfg.seed, streams::BATCH_ORDER, bs, train_set.len());
    let epochs = cfg.optim.epochs;

    let mut history = Vec::with_capacity(epochs);
    let mut masked_max_abs = Vec::new();
    let mut divergence = None;
    let mut step = 0usize;

    'epochs: for epoch in 0..epochs {
        let lr = cfg.optim.lr_at(epoch);
        let mut loss_sum = 0.0;
        let batches = if full_batch { vec![(0..train_set.len()).collect()] } else { plan.batches(epoch) };
        for idx in batches {
            let (x, y) = train_set.gather::<F>(&idx);
            let loss = match model.compute_grad(&x, &y, Mode::Train) {
                Ok(l) => l,
                Err(e) if e.is_divergence() => {
                    divergence = Some(Divergence { epoch, step, message: e.to_string() });
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            };
            loss_sum += loss * idx.len() as f64;
            if let Some(keep) = mask {
                apply_mask(model.grad.data_mut(), keep);
            }
            let grad = std::mem::replace(&mut model.grad, crate::numerics::Tensor::zeros(&[0]));
            let stepped = opt.step(model.theta_mut(), grad.data(), lr);
            model.grad = grad;
            if let Err(e) = stepped {
                divergence = Some(Divergence { epoch, step, message: e.to_string() });
                break 'epochs;
            }
            if let Some(keep) = mask {
                opt.apply_mask(keep);
                apply_mask(model.theta_mut(), keep);
            }
            step += 1;
        }
        let last = epoch + 1 == epochs;
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let (train_eval, test_eval) = if last || due {
            (Some(model.evaluate(train_set)?), test_set.map(|t| model.evaluate(t)).transpose()?)
        } else {
            (None, None)
        };
        history.push(EpochMetrics {
            epoch,
            lr,
            batch_loss: loss_sum / train_set.len() as f64,
            train: train_eval,
            test: test_eval,
        });
        if let Some(keep) = mask {
            masked_max_abs.push(masked_max(model.theta(), keep));
        }
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(epoch, &model);
        }
    }

    let (final_train, final_test) = match history.last() {
        Some(EpochMetrics { train: Some(tr), test, .. }) if divergence.is_none() => (*tr, *test),
        _ => (model.evaluate(train_set)?, test_set.map(|t| model.evaluate(t)).transpose()?),
    };
    Ok(TrainOutcome { model, theta0, history, final_train, final_test, divergence, masked_max_abs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::two_gaussians;

    fn cfg(algorithm: OptimConfig) -> TrainConfig {
        TrainConfig::new(ModelSpec::mlp_with_input(2, 8).with_classes(2), algorithm, 3)
    }

    #[test]
    fn sgd_learns_separable_blobs() {
        let data = two_gaussians(400, 6.0, &mut RngStream::new(0, 0));
        let mut c = cfg(OptimConfig::sgd(32, 10));
        c.optim.base_lr = 0.05;
        let out = train::<f32>(&c, &data, None, TrainOptions::default()).unwrap();
        assert!(out.divergence.is_none());
        assert!(out.final_train.accuracy > 0.97, "{}", out.final_train.accuracy);
        assert_eq!(out.history.len(), 10);
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let data = two_gaussians(200, 3.0, &mut RngStream::new(1, 0));
        for optim in [OptimConfig::sgd(16, 3), OptimConfig::adam(16, 3), OptimConfig::full_batch_gd(3)] {
            let a = train::<f32>(&cfg(optim.clone()), &data, None, TrainOptions::default()).unwrap();
            let b = train::<f32>(&cfg(optim), &data, None, TrainOptions::default()).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.model.theta()), bits(b.model.theta()));
            assert_eq!(a.history, b.history);
        }
    }

    #[test]
    fn huge_learning_rate_is_recorded_as_divergence() {
        let data = two_gaussians(64, 3.0, &mut RngStream::new(1, 0));
        let mut c = cfg(OptimConfig::sgd(8, 20));
        c.optim.base_lr = 1e30;
        let out = train::<f32>(&c, &data, None, TrainOptions::default()).unwrap();
        assert!(out.divergence.is_some());
    }

    #[test]
    fn mask_holds_coordinates_at_zero() {
        let data = two_gaussians(100, 3.0, &mut RngStream::new(2, 0));
        let c = cfg(OptimConfig::sgd(10, 4));
        let n = c.model.param_count();
        let keep: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let out = train::<f64>(&c, &data, None, TrainOptions { mask: Some(&keep), ..Default::default() }).unwrap();
        assert_eq!(out.masked_max_abs, vec![0.0; 4]);
        assert!(out.model.theta().iter().zip(&keep).all(|(v, &k)| k || *v == 0.0));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let data = two_gaussians(10, 3.0, &mut RngStream::new(2, 0));
        let c = TrainConfig::new(ModelSpec::mlp_with_input(3, 4), OptimConfig::sgd(4, 1), 0);
        assert!(matches!(train::<f32>(&c, &data, None, TrainOptions::default()), Err(TrainError::Mismatch(_))));
    }
}
