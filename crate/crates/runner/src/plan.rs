//! Experiment plan files and their expansion into independent cells.

use std::collections::BTreeSet;

use overparam_core::data::Allocation;
use overparam_core::landscape::{DEFAULT_ITERATIONS, DEFAULT_SAMPLES, DEFAULT_SIGMAS, HESSIAN_SUBSET};
use overparam_core::nn::{ModelKind, ModelSpec, CIFAR_SHAPE, MNIST_FEATURES};
use overparam_core::optim::{Algorithm, OptimConfig, Schedule, GD_SUBSET};
use overparam_core::pruning::LotterySettings;
use overparam_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::RunnerError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    DoubleDescent,
    ImplicitReg,
    LandscapeCompare,
    NtkSweep,
    Lottery,
}

impl Suite {
    pub const ALL: [Suite; 5] =
        [Suite::DoubleDescent, Suite::ImplicitReg, Suite::LandscapeCompare, Suite::NtkSweep, Suite::Lottery];

    pub fn name(self) -> &'static str {
        match self {
            Suite::DoubleDescent => "double-descent",
            Suite::ImplicitReg => "implicit-reg",
            Suite::LandscapeCompare => "landscape-compare",
            Suite::NtkSweep => "ntk-sweep",
            Suite::Lottery => "lottery",
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Generated prototype digits with the MNIST layout; needs no files.
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub train: usize,
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset: DatasetKind,
    /// Stratified training subset size; absent means the full split.
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub allocation: Allocation,
    #[serde(default)]
    pub subset_seed: u64,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Hidden widths (MLP) or base channel counts (CNN).
    pub widths: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtraOptimizer {
    /// Adam at batch size 128.
    Adam,
    /// Full-batch gradient descent on a 5,000-sample subset.
    FullBatchGd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    /// Overrides the batch-scaled SGD learning rate for every SGD row.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub extra: Vec<ExtraOptimizer>,
    /// Evaluate on the full train and test sets every this many epochs.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_batch_sizes() -> Vec<usize> {
    vec![128]
}
fn default_schedule() -> Schedule {
    Schedule::Cosine
}
fn default_eval_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples_per_sigma: usize,
    #[serde(default = "default_hessian_subset")]
    pub hessian_subset: usize,
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_sigmas() -> Vec<f64> {
    DEFAULT_SIGMAS.to_vec()
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_hessian_subset() -> usize {
    HESSIAN_SUBSET
}

impl Default for LandscapeSection {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            sigmas: default_sigmas(),
            samples_per_sigma: DEFAULT_SAMPLES,
            hessian_subset: HESSIAN_SUBSET,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkSection {
    /// Number of training samples for the tangent-kernel drift; 0 skips it.
    #[serde(default)]
    pub kernel_probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub suite: Suite,
    pub seeds: Vec<u64>,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub landscape: Option<LandscapeSection>,
    #[serde(default)]
    pub ntk: Option<NtkSection>,
    #[serde(default)]
    pub lottery: Option<LotterySettings>,
}

/// Everything that determines one run; its hash is the cell id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub suite: Suite,
    pub grid_index: usize,
    pub label: String,
    pub dataset: DatasetKind,
    pub synthetic: Option<SyntheticSpec>,
    pub train_subset: Option<usize>,
    pub allocation: Allocation,
    pub subset_seed: u64,
    pub train: TrainConfig,
    pub landscape: Option<LandscapeSection>,
    pub ntk: Option<NtkSection>,
    pub lottery: Option<LotterySettings>,
}

impl CellConfig {
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("cell config serializes");
        hex::encode(&Sha256::digest(&json)[..12])
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }
}

#[derive(Clone, Debug, PartialEq)]
struct OptimRow {
    label: String,
    optim: OptimConfig,
    subset: Option<usize>,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self, RunnerError> {
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| RunnerError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: &str| Err(RunnerError::Plan(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        if self.model.widths.is_empty() || self.model.widths.contains(&0) {
            return bad("model.widths must be a non-empty list of positive integers");
        }
        if self.train.epochs == 0 {
            return bad("train.epochs must be positive");
        }
        if self.train.batch_sizes.is_empty() && self.train.extra.is_empty() {
            return bad("train needs at least one batch size or extra optimizer");
        }
        if self.train.batch_sizes.contains(&0) {
            return bad("batch sizes must be positive");
        }
        if self.data.train_subset == Some(0) {
            return bad("data.train_subset must be positive");
        }
        match (self.data.dataset, &self.data.synthetic) {
            (DatasetKind::Synthetic, None) => return bad("dataset \"synthetic\" needs a [data.synthetic] table"),
            (DatasetKind::Synthetic, Some(s)) if s.train == 0 || s.test == 0 => {
                return bad("synthetic train and test sizes must be positive")
            }
            (DatasetKind::Mnist | DatasetKind::Cifar10, Some(_)) => {
                return bad("[data.synthetic] only applies to dataset \"synthetic\"")
            }
            _ => {}
        }
        if self.model.kind == ModelKind::Cnn && self.data.dataset != DatasetKind::Cifar10 {
            return bad("CNN models need dataset \"cifar10\"");
        }
        match self.suite {
            Suite::Lottery if self.lottery.is_none() => return bad("suite lottery needs a [lottery] table"),
            Suite::LandscapeCompare if self.landscape.is_none() => {
                return bad("suite landscape-compare needs a [landscape] table")
            }
            Suite::LandscapeCompare if self.train.batch_sizes.len() < 2 => {
                return bad("suite landscape-compare needs at least two batch sizes")
            }
            _ => {}
        }
        if let Some(l) = &self.landscape {
            if l.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) || l.samples_per_sigma == 0 {
                return bad("landscape sigmas must be finite and non-negative, samples_per_sigma positive");
            }
            if l.hessian_subset == 0 || l.iterations == 0 {
                return bad("landscape hessian_subset and iterations must be positive");
            }
        }
        if let Some(l) = &self.lottery {
            if l.remaining_pct.is_empty() || l.remaining_pct.iter().any(|p| !(*p > 0.0 && *p <= 100.0)) {
                return bad("lottery.remaining_pct values must lie in (0, 100]");
            }
        }
        for cell in self.cells() {
            cell.train.validate().map_err(|e| RunnerError::Plan(format!("{}: {e}", cell.label)))?;
        }
        Ok(())
    }

    fn model_spec(&self, width: usize) -> ModelSpec {
        match self.model.kind {
            ModelKind::Mlp => {
                let features = match self.data.dataset {
                    DatasetKind::Cifar10 => CIFAR_SHAPE.iter().product(),
                    _ => MNIST_FEATURES,
                };
                ModelSpec::mlp_with_input(features, width)
            }
            ModelKind::Cnn => ModelSpec::cnn(width),
        }
    }

    fn optim_rows(&self) -> Vec<OptimRow> {
        let t = &self.train;
        let mut rows: Vec<OptimRow> = t
            .batch_sizes
            .iter()
            .map(|&bs| {
                let mut optim = OptimConfig::sgd(bs, t.epochs);
                optim.schedule = t.schedule;
                if let Some(lr) = t.lr {
                    optim.base_lr = lr;
                }
                OptimRow { label: format!("sgd bs={bs}"), optim, subset: self.data.train_subset }
            })
            .collect();
        for extra in &t.extra {
            rows.push(match extra {
                ExtraOptimizer::Adam => {
                    let mut optim = OptimConfig::adam(128, t.epochs);
                    optim.schedule = t.schedule;
                    OptimRow { label: "adam bs=128".into(), optim, subset: self.data.train_subset }
                }
                ExtraOptimizer::FullBatchGd => {
                    let n = self.data.train_subset.map_or(GD_SUBSET, |s| s.min(GD_SUBSET));
                    let mut optim = OptimConfig::full_batch_gd(t.epochs);
                    optim.batch_size = n;
                    OptimRow { label: format!("gd n={n}"), optim, subset: Some(n) }
                }
            });
        }
        rows
    }

    /// Grid points in a stable order: widths outermost, optimizer rows inner.
    pub fn grid(&self) -> Vec<CellConfig> {
        let rows = self.optim_rows();
        let landscape = match self.suite {
            Suite::ImplicitReg | Suite::LandscapeCompare => self.landscape.clone(),
            _ => None,
        };
        let ntk = match self.suite {
            Suite::NtkSweep => Some(self.ntk.clone().unwrap_or_default()),
            _ => None,
        };
        let lottery = match self.suite {
            Suite::Lottery => self.lottery.clone(),
            _ => None,
        };
        let mut out = Vec::new();
        for &w in &self.model.widths {
            for row in &rows {
                let kind = match self.model.kind {
                    ModelKind::Mlp => "mlp w",
                    ModelKind::Cnn => "cnn c",
                };
                let mut train = TrainConfig::new(self.model_spec(w), row.optim.clone(), 0);
                train.eval_every = self.train.eval_every;
                out.push(CellConfig {
                    suite: self.suite,
                    grid_index: out.len(),
                    label: format!("{kind}={w} {}", row.label),
                    dataset: self.data.dataset,
                    synthetic: self.data.synthetic,
                    train_subset: row.subset,
                    allocation: self.data.allocation,
                    subset_seed: self.data.subset_seed,
                    train,
                    landscape: landscape.clone(),
                    ntk: ntk.clone(),
                    lottery: lottery.clone(),
                });
            }
        }
        out
    }

    /// Every (grid point, seed) pair.
    pub fn cells(&self) -> Vec<CellConfig> {
        let grid = self.grid();
        let mut out = Vec::with_capacity(grid.len() * self.seeds.len());
        for g in &grid {
            for &seed in &self.seeds {
                let mut c = g.clone();
                c.train.seed = seed;
                out.push(c);
            }
        }
        out
    }

    pub fn desk_default(suite: Suite) -> Self {
        let mnist = |subset| DataSection {
            dataset: DatasetKind::Mnist,
            train_subset: Some(subset),
            allocation: Allocation::Balanced,
            subset_seed: 0,
            synthetic: None,
        };
        let mlp = |widths: &[usize]| ModelSection { kind: ModelKind::Mlp, widths: widths.to_vec() };
        let train = |batch_sizes: &[usize], eval_every| TrainSection {
            epochs: 40,
            batch_sizes: batch_sizes.to_vec(),
            lr: None,
            schedule: Schedule::Cosine,
            extra: Vec::new(),
            eval_every,
        };
        let base = ExperimentPlan {
            suite,
            seeds: vec![0, 1, 2],
            data: mnist(10_000),
            model: mlp(&[8, 16, 32, 64, 128, 256, 512]),
            train: train(&[128], 5),
            landscape: None,
            ntk: None,
            lottery: None,
        };
        match suite {
            Suite::DoubleDescent => base,
            Suite::ImplicitReg => ExperimentPlan {
                seeds: vec![0, 1, 2, 3, 4],
                model: mlp(&[256]),
                train: train(&[32, 128, 1024], 10),
                ..base
            },
            Suite::LandscapeCompare => ExperimentPlan {
                seeds: vec![0, 1, 2, 3, 4],
                model: mlp(&[256]),
                train: train(&[32, 1024], 10),
                landscape: Some(LandscapeSection::default()),
                ..base
            },
            Suite::NtkSweep => ExperimentPlan {
                data: mnist(5_000),
                model: mlp(&[32, 64, 128, 256, 512, 1024]),
                train: train(&[128], 10),
                ntk: Some(NtkSection { kernel_probes: 0 }),
                ..base
            },
            Suite::Lottery => ExperimentPlan {
                model: mlp(&[256]),
                train: train(&[128], 10),
                lottery: Some(LotterySettings { remaining_pct: vec![100.0, 30.0, 10.0, 5.0], rounds: 1, control: true }),
                ..base
            },
        }
    }
}

/// Learning-rate family of a row, used to find the batch-size comparison.
pub fn is_sgd(cell: &CellConfig) -> bool {
    cell.train.optim.algorithm == Algorithm::SgdMomentum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_validate_and_round_trip() {
        for suite in Suite::ALL {
            let plan = ExperimentPlan::desk_default(suite);
            plan.validate().unwrap();
            let text = plan.to_toml();
            assert_eq!(ExperimentPlan::from_toml(&text).unwrap(), plan, "{text}");
        }
    }

    #[test]
    fn grid_is_widths_times_rows() {
        let mut plan = ExperimentPlan::desk_default(Suite::ImplicitReg);
        plan.model.widths = vec![16, 32];
        plan.train.extra = vec![ExtraOptimizer::Adam, ExtraOptimizer::FullBatchGd];
        let grid = plan.grid();
        assert_eq!(grid.len(), 2 * 5);
        assert_eq!(grid[4].label, "mlp w=16 gd n=5000");
        assert_eq!(grid[4].train_subset, Some(5000));
        assert_eq!(grid[0].train.optim.base_lr, 0.005);
        assert_eq!(plan.cells().len(), 10 * 5);
        let ids: BTreeSet<String> = plan.cells().iter().map(|c| c.id()).collect();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let good = ExperimentPlan::desk_default(Suite::DoubleDescent).to_toml();
        assert!(ExperimentPlan::from_toml(&good.replace("epochs = 40", "epochs = 40\nepocs = 3")).is_err());
        assert!(ExperimentPlan::from_toml(&good.replace("seeds = [", "seeds = [0, ")).is_err());
        assert!(ExperimentPlan::from_toml(&good.replace("epochs = 40", "epochs = 0")).is_err());
        assert!(ExperimentPlan::from_toml("suite = \"lottery\"").is_err());
    }

    #[test]
    fn shipped_plan_files_parse() {
        let desk = [
            (Suite::DoubleDescent, include_str!("../plans/double-descent.toml")),
            (Suite::ImplicitReg, include_str!("../plans/implicit-reg.toml")),
            (Suite::LandscapeCompare, include_str!("../plans/landscape-compare.toml")),
            (Suite::NtkSweep, include_str!("../plans/ntk-sweep.toml")),
            (Suite::Lottery, include_str!("../plans/lottery.toml")),
        ];
        for (suite, text) in desk {
            assert_eq!(ExperimentPlan::from_toml(text).unwrap(), ExperimentPlan::desk_default(suite));
        }
        for text in [
            include_str!("../plans/full-scale/cnn-double-descent.toml"),
            include_str!("../plans/full-scale/cnn-implicit-reg.toml"),
            include_str!("../plans/full-scale/cnn-landscape-compare.toml"),
            include_str!("../plans/full-scale/cnn-lottery.toml"),
            include_str!("../plans/full-scale/mlp-ntk-sweep.toml"),
        ] {
            ExperimentPlan::from_toml(text).unwrap();
        }
    }
}
