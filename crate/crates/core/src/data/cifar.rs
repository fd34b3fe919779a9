//! CIFAR-10 binary batches: each record is one label byte followed by a
//! 32×32 red plane, green plane and blue plane.

use std::path::{Path, PathBuf};

use super::{read_file, DataError, Dataset, Normalization, Split};

pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const STD: [f64; 3] = [0.2023, 0.1994, 0.2010];

/// Split a byte stream of whole records into labels and pixel planes.
pub fn parse_records(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(DataError::Truncated(format!(
            "{} bytes is not a whole number of {RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    for (index, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] > 9 {
            return Err(DataError::LabelRange { index, label: rec[0], classes: 10 });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

pub fn encode_records(labels: &[u8], pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() * RECORD_BYTES);
    for (i, &l) in labels.iter().enumerate() {
        out.push(l);
        out.extend_from_slice(&pixels[i * (RECORD_BYTES - 1)..(i + 1) * (RECORD_BYTES - 1)]);
    }
    out
}

fn batch_files(dir: &Path, split: Split) -> Option<Vec<PathBuf>> {
    let names: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    for sub in ["", "cifar-10-batches-bin"] {
        let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(sub).join(n)).collect();
        if paths.iter().all(|p| p.is_file()) {
            return Some(paths);
        }
    }
    None
}

/// Decode records into a `[3, 32, 32]` dataset standardized with the
/// fixed CIFAR-10 channel statistics.
pub fn cifar_from_bytes(name: &str, bytes: &[u8]) -> Result<Dataset, DataError> {
    let (labels, pixels) = parse_records(bytes)?;
    let inputs = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let mut ds = Dataset::new(name, vec![3, 32, 32], 10, inputs, labels, Normalization::UnitScale)?;
    ds.standardize(&MEAN, &STD)?;
    Ok(ds)
}

/// Load a CIFAR-10 split from `dir` or `dir/cifar-10-batches-bin`.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let files = batch_files(dir, split)
        .ok_or_else(|| DataError::NotFound(format!("CIFAR-10 {split:?} batches under {}", dir.display())))?;
    let mut bytes = Vec::new();
    for f in files {
        bytes.extend(read_file(&f)?);
    }
    let name = match split {
        Split::Train => "cifar10-train",
        Split::Test => "cifar10-test",
    };
    cifar_from_bytes(name, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planes_are_channel_major_and_standardized() {
        let mut px = vec![0u8; 3072];
        px[..1024].fill(255);
        let d = cifar_from_bytes("c", &encode_records(&[3], &px)).unwrap();
        assert_eq!(d.labels(), &[3]);
        let s = d.sample(0);
        assert!((s[0] as f64 - (1.0 - MEAN[0]) / STD[0]).abs() < 1e-5);
        assert!((s[1024] as f64 + MEAN[1] / STD[1]).abs() < 1e-5);
        assert!((s[2048] as f64 + MEAN[2] / STD[2]).abs() < 1e-5);
    }

    #[test]
    fn truncated_record_and_bad_label() {
        let bytes = encode_records(&[1, 2], &vec![7u8; 2 * 3072]);
        assert!(matches!(parse_records(&bytes[..bytes.len() - 1]), Err(DataError::Truncated(_))));
        let mut bad = bytes.clone();
        bad[RECORD_BYTES] = 10;
        assert!(matches!(parse_records(&bad), Err(DataError::LabelRange { index: 1, .. })));
        let (labels, pixels) = parse_records(&bytes).unwrap();
        assert_eq!(encode_records(&labels, &pixels), bytes);
    }
}
