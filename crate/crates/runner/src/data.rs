//! Loading and subsetting the datasets a plan needs, once per plan.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use overparam_core::data::idx::{encode_images, encode_labels, mnist_from_bytes};
use overparam_core::data::synthetic::prototype_images;
use overparam_core::data::{load_cifar10, load_mnist, stratified_subset, Allocation, Dataset, Split};
use overparam_core::numerics::{streams, RngStream};

use crate::plan::{CellConfig, DatasetKind, SyntheticSpec};
use crate::RunnerError;

/// Environment variable naming the dataset root directory.
pub const DATA_ENV: &str = "OVERPARAM_DATA";

pub fn default_root() -> PathBuf {
    std::env::var_os(DATA_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// Prototype-digit train/test pair with the MNIST layout.
pub fn synthetic_pair(spec: &SyntheticSpec) -> (Dataset, Dataset) {
    let mut rng = RngStream::new(spec.seed, 0).derive(0xF1);
    let mut make = |n: usize, name: &str| {
        let (img, lbl) = prototype_images(n, 28, 28, 10, 0.5, spec.seed, &mut rng);
        mnist_from_bytes(name, &encode_images(&img), &encode_labels(&lbl)).expect("generated data is well formed")
    };
    let train = make(spec.train, "synthetic-train");
    let test = make(spec.test, "synthetic-test");
    (train, test)
}

fn load(kind: DatasetKind, synthetic: Option<&SyntheticSpec>, root: &Path) -> Result<(Dataset, Dataset), RunnerError> {
    let wrap = |e| RunnerError::Data { root: root.to_path_buf(), source: e };
    match kind {
        DatasetKind::Mnist => {
            Ok((load_mnist(root, Split::Train).map_err(wrap)?, load_mnist(root, Split::Test).map_err(wrap)?))
        }
        DatasetKind::Cifar10 => {
            Ok((load_cifar10(root, Split::Train).map_err(wrap)?, load_cifar10(root, Split::Test).map_err(wrap)?))
        }
        DatasetKind::Synthetic => Ok(synthetic_pair(synthetic.expect("validated plan"))),
    }
}

/// Training subsets keyed by size, all drawn from one full split.
pub struct PreparedData {
    full_train: Dataset,
    pub test: Dataset,
    subsets: BTreeMap<usize, Dataset>,
    allocation: Allocation,
    subset_seed: u64,
}

impl PreparedData {
    /// Load the split once and draw every subset the cells need.
    pub fn for_cells(cells: &[CellConfig], root: &Path) -> Result<Option<Self>, RunnerError> {
        let Some(first) = cells.first() else { return Ok(None) };
        let (full_train, test) = load(first.dataset, first.synthetic.as_ref(), root)?;
        let mut data = Self {
            full_train,
            test,
            subsets: BTreeMap::new(),
            allocation: first.allocation,
            subset_seed: first.subset_seed,
        };
        for c in cells {
            if let Some(n) = c.train_subset {
                data.subset(n)?;
            }
        }
        Ok(Some(data))
    }

    fn subset(&mut self, n: usize) -> Result<(), RunnerError> {
        if n >= self.full_train.len() || self.subsets.contains_key(&n) {
            return Ok(());
        }
        let mut rng = RngStream::new(self.subset_seed, streams::SUBSET);
        let subset = stratified_subset(&self.full_train, n, self.allocation, &mut rng)
            .map_err(|e| RunnerError::Data { root: PathBuf::new(), source: e })?;
        self.subsets.insert(n, subset);
        Ok(())
    }

    pub fn train_for(&self, cell: &CellConfig) -> &Dataset {
        cell.train_subset.and_then(|n| self.subsets.get(&n)).unwrap_or(&self.full_train)
    }

    /// A stratified `n`-sample subset of `base`, identical for every cell
    /// that shares `base` and `label`.
    pub fn shared_subset(&self, base: &Dataset, n: usize, label: u64) -> Dataset {
        if n >= base.len() {
            return base.clone();
        }
        let mut rng = RngStream::new(self.subset_seed, streams::SUBSET).derive(label);
        stratified_subset(base, n, self.allocation, &mut rng).expect("n is below the dataset size")
    }
}
