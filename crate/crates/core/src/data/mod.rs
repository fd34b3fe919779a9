//! Datasets: IDX and CIFAR-10 binary parsers, normalization, stratified
//! subsets and deterministic mini-batch plans.

mod batch;
pub mod cifar;
pub mod idx;
mod subset;
pub mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::numerics::Scalar;

pub use batch::BatchPlan;
pub use cifar::load_cifar10;
pub use idx::load_mnist;
pub use subset::{stratified_subset, Allocation};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated input: {0}")]
    Truncated(String),
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside [0, {classes})")]
    LabelRange { index: usize, label: u8, classes: usize },
    #[error("requested {requested} samples but only {available} are available")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("dataset is already normalized ({0:?})")]
    AlreadyNormalized(Normalization),
    #[error("shape: {0}")]
    Shape(String),
    #[error("no dataset files found: {0}")]
    NotFound(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Preprocessing already applied to a dataset's inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Normalization {
    None,
    /// Bytes divided by 255.
    UnitScale,
    /// Bytes divided by 255, then `(x - mean[c]) / std[c]` per channel.
    PerChannel { mean: Vec<f64>, std: Vec<f64> },
}

/// Immutable labelled sample set. Inputs are stored as `f32` in
/// `[n, sample_shape...]` row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    sample_shape: Vec<usize>,
    classes: usize,
    inputs: Vec<f32>,
    labels: Vec<u8>,
    normalization: Normalization,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        sample_shape: Vec<usize>,
        classes: usize,
        inputs: Vec<f32>,
        labels: Vec<u8>,
        normalization: Normalization,
    ) -> Result<Self, DataError> {
        let features: usize = sample_shape.iter().product();
        if features == 0 {
            return Err(DataError::Shape(format!("empty sample shape {sample_shape:?}")));
        }
        if inputs.len() != features * labels.len() {
            return Err(DataError::CountMismatch { images: inputs.len() / features, labels: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
            return Err(DataError::LabelRange { index, label, classes });
        }
        Ok(Self { name: name.into(), sample_shape, classes, inputs, labels, normalization })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn features(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let f = self.features();
        &self.inputs[i * f..(i + 1) * f]
    }

    /// Inputs and labels of the given samples, converted to `F`.
    pub fn gather<F: Scalar>(&self, indices: &[usize]) -> (Vec<F>, Vec<u8>) {
        let f = self.features();
        let mut x = Vec::with_capacity(indices.len() * f);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend(self.sample(i).iter().map(|&v| F::from_f64(v as f64)));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// All samples as `F`, in storage order.
    pub fn all<F: Scalar>(&self) -> (Vec<F>, Vec<u8>) {
        (self.inputs.iter().map(|&v| F::from_f64(v as f64)).collect(), self.labels.clone())
    }

    /// New dataset made of the given samples in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let f = self.features();
        let mut inputs = Vec::with_capacity(indices.len() * f);
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Dataset {
            name: self.name.clone(),
            sample_shape: self.sample_shape.clone(),
            classes: self.classes,
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            normalization: self.normalization.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Apply per-channel standardization to unit-scaled inputs. Channels are
    /// the leading axis of the sample shape. Refuses to run twice.
    pub fn standardize(&mut self, mean: &[f64], std: &[f64]) -> Result<(), DataError> {
        if self.normalization != Normalization::UnitScale {
            return Err(DataError::AlreadyNormalized(self.normalization.clone()));
        }
        let channels = self.sample_shape[0];
        if mean.len() != channels || std.len() != channels || std.iter().any(|&s| !(s > 0.0)) {
            return Err(DataError::Shape(format!("need {channels} means and positive stds")));
        }
        let plane = self.features() / channels;
        for (k, v) in self.inputs.iter_mut().enumerate() {
            let c = (k / plane) % channels;
            *v = ((*v as f64 - mean[c]) / std[c]) as f32;
        }
        self.normalization = Normalization::PerChannel { mean: mean.to_vec(), std: std.to_vec() };
        Ok(())
    }

    pub(crate) fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::new("toy", vec![2], 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![0, 2, 1], Normalization::UnitScale)
            .unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_counts() {
        assert!(matches!(
            Dataset::new("x", vec![1], 2, vec![0.0], vec![2], Normalization::None),
            Err(DataError::LabelRange { .. })
        ));
        assert!(matches!(
            Dataset::new("x", vec![2], 2, vec![0.0], vec![0], Normalization::None),
            Err(DataError::CountMismatch { .. })
        ));
    }

    #[test]
    fn select_and_gather_agree() {
        let d = toy();
        let s = d.select(&[2, 0]);
        assert_eq!(s.labels(), &[1, 0]);
        assert_eq!(s.inputs(), &[4.0, 5.0, 0.0, 1.0]);
        let (x, y) = d.gather::<f64>(&[2, 0]);
        assert_eq!(x, vec![4.0, 5.0, 0.0, 1.0]);
        assert_eq!(y, vec![1, 0]);
        assert_eq!(d.class_counts(), vec![1, 1, 1]);
    }

    #[test]
    fn standardize_applies_once() {
        let mut d = Dataset::new("c", vec![2, 2], 2, vec![0.5; 8], vec![0, 1], Normalization::UnitScale).unwrap();
        d.standardize(&[0.5, 0.25], &[0.5, 0.25]).unwrap();
        assert_eq!(d.sample(0), &[0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(d.standardize(&[0.0, 0.0], &[1.0, 1.0]), Err(DataError::AlreadyNormalized(_))));
    }
}
