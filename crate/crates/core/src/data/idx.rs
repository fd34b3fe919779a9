//! MNIST in the big-endian IDX format.

use std::path::{Path, PathBuf};

use super::{read_file, DataError, Dataset, Normalization, Split};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::Truncated(format!("{what} header")))
}

/// Parsed IDX image file: `count` images of `rows × cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let magic = be_u32(bytes, 0, "image")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic { expected: IMAGE_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4, "image")? as usize;
    let rows = be_u32(bytes, 8, "image")? as usize;
    let cols = be_u32(bytes, 12, "image")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(DataError::Truncated(format!("image data has {} of {need} bytes", body.len())));
    }
    Ok(IdxImages { count, rows, cols, pixels: body[..need].to_vec() })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0, "label")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic { expected: LABEL_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4, "label")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(DataError::Truncated(format!("label data has {} of {count} bytes", body.len())));
    }
    Ok(body[..count].to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn prefix(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "t10k",
    }
}

fn find(dir: &Path, stem: &str) -> Option<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    for sub in ["", "MNIST/raw", "mnist"] {
        for name in [stem, dotted.as_str()] {
            let p = dir.join(sub).join(name);
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

/// Paths of the image and label files for `split` under `dir`, if present.
pub fn mnist_files(dir: &Path, split: Split) -> Option<(PathBuf, PathBuf)> {
    let p = prefix(split);
    Some((find(dir, &format!("{p}-images-idx3-ubyte"))?, find(dir, &format!("{p}-labels-idx1-ubyte"))?))
}

/// Decode images and labels into a flat, `[0, 1]`-scaled dataset.
pub fn mnist_from_bytes(name: &str, images: &[u8], labels: &[u8]) -> Result<Dataset, DataError> {
    let images = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if images.count != labels.len() {
        return Err(DataError::CountMismatch { images: images.count, labels: labels.len() });
    }
    let inputs = images.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Dataset::new(name, vec![images.rows * images.cols], 10, inputs, labels, Normalization::UnitScale)
}

/// Load one MNIST split from `dir`. Accepts the original file names with
/// either `-idx` or `.idx` separators, directly in `dir` or under
/// `MNIST/raw` or `mnist`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let (img, lbl) = mnist_files(dir, split)
        .ok_or_else(|| DataError::NotFound(format!("MNIST {} files under {}", prefix(split), dir.display())))?;
    let name = format!("mnist-{}", prefix(split));
    mnist_from_bytes(&name, &read_file(&img)?, &read_file(&lbl)?)
}

/// Write an IDX image/label pair for `split` into `dir` using the canonical names.
pub fn write_mnist(dir: &Path, split: Split, images: &IdxImages, labels: &[u8]) -> Result<(), DataError> {
    let io = |path: &Path, e| DataError::Io { path: path.to_path_buf(), source: e };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let p = prefix(split);
    let img = dir.join(format!("{p}-images-idx3-ubyte"));
    let lbl = dir.join(format!("{p}-labels-idx1-ubyte"));
    std::fs::write(&img, encode_images(images)).map_err(|e| io(&img, e))?;
    std::fs::write(&lbl, encode_labels(labels)).map_err(|e| io(&lbl, e))?;
    Ok(())
}
