//! Small generated datasets for tests and offline smoke runs.

use std::path::Path;

use super::idx::{write_mnist, IdxImages};
use super::{DataError, Dataset, Normalization, Split};
use crate::numerics::RngStream;

/// Two isotropic 2-D Gaussian blobs centred at `(±separation/2, 0)`;
/// labels alternate 0, 1, 0, ...
pub fn two_gaussians(n: usize, separation: f64, rng: &mut RngStream) -> Dataset {
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let cx = if label == 0 { -separation / 2.0 } else { separation / 2.0 };
        inputs.push((cx + rng.normal()) as f32);
        inputs.push(rng.normal() as f32);
        labels.push(label);
    }
    Dataset::new("two-gaussians", vec![2], 2, inputs, labels, Normalization::None).expect("consistent by construction")
}

/// Byte images drawn around one random prototype per class: each pixel is
/// the prototype pixel with probability `1 - noise`, otherwise a random byte.
pub fn prototype_images(
    n: usize,
    rows: usize,
    cols: usize,
    classes: usize,
    noise: f64,
    seed: u64,
    rng: &mut RngStream,
) -> (IdxImages, Vec<u8>) {
    let mut proto_rng = RngStream::new(seed, 0).derive(0xC1A55);
    let plane = rows * cols;
    let protos: Vec<u8> = (0..classes * plane).map(|_| if proto_rng.uniform() < 0.3 { 255 } else { 0 }).collect();
    let mut pixels = Vec::with_capacity(n * plane);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.below(classes);
        labels.push(c as u8);
        for &p in &protos[c * plane..(c + 1) * plane] {
            pixels.push(if rng.uniform() < noise { rng.below(256) as u8 } else { p });
        }
    }
    (IdxImages { count: n, rows, cols, pixels }, labels)
}

/// Write a 28×28, 10-class IDX train/test pair into `dir`, readable by
/// [`load_mnist`](super::load_mnist).
pub fn write_mnist_fixture(dir: &Path, train: usize, test: usize, seed: u64) -> Result<(), DataError> {
    let mut rng = RngStream::new(seed, 0).derive(0xF1);
    let (img, lbl) = prototype_images(train, 28, 28, 10, 0.5, seed, &mut rng);
    write_mnist(dir, Split::Train, &img, &lbl)?;
    let (img, lbl) = prototype_images(test, 28, 28, 10, 0.5, seed, &mut rng);
    write_mnist(dir, Split::Test, &img, &lbl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_mnist;

    #[test]
    fn blobs_are_balanced_and_centred() {
        let d = two_gaussians(2000, 4.0, &mut RngStream::new(0, 0));
        assert_eq!(d.class_counts(), vec![1000, 1000]);
        let mean0: f64 = (0..2000).step_by(2).map(|i| d.sample(i)[0] as f64).sum::<f64>() / 1000.0;
        assert!((mean0 + 2.0).abs() < 0.15);
    }

    #[test]
    fn fixture_loads_as_mnist() {
        let tmp = tempfile::tempdir().unwrap();
        write_mnist_fixture(tmp.path(), 50, 20, 3).unwrap();
        let tr = load_mnist(tmp.path(), Split::Train).unwrap();
        let te = load_mnist(tmp.path(), Split::Test).unwrap();
        assert_eq!((tr.len(), te.len(), tr.features()), (50, 20, 784));
    }
}
