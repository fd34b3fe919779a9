//! Binary checkpoints: an 8-byte magic, a length-prefixed JSON header and
//! raw little-endian parameter and statistics bytes.
//!
//! Values are stored as their exact bit patterns so a round trip is
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BnStats, ModelError, ModelSpec, ModelState};
use crate::numerics::{RngState, Scalar};

const MAGIC: &[u8; 8] = b"OPCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    dtype: String,
    param_count: usize,
    bn_channels: Vec<usize>,
    epoch: usize,
    rng: Option<RngState>,
}

/// A model together with the training position it was saved at.
#[derive(Clone, Debug)]
pub struct Checkpoint<F: Scalar> {
    pub model: ModelState<F>,
    pub epoch: usize,
    pub rng: Option<RngState>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(model: ModelState<F>, epoch: usize, rng: Option<RngState>) -> Self {
        Self { model, epoch, rng }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let layout = self.model.layout();
        let header = Header {
            spec: self.model.spec().clone(),
            dtype: F::DTYPE.to_string(),
            param_count: layout.param_count,
            bn_channels: layout.bn_channels.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + layout.param_count * std::mem::size_of::<F>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&F::to_le_bytes_vec(self.model.theta()));
        for s in &self.model.bn {
            out.extend_from_slice(&F::to_le_bytes_vec(&s.mean));
            out.extend_from_slice(&F::to_le_bytes_vec(&s.var));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
        if header.dtype != F::DTYPE {
            return Err(bad(&format!("stored as {}, requested {}", header.dtype, F::DTYPE)));
        }
        let width = std::mem::size_of::<F>();
        let mut rest = &body[hlen..];
        let mut take = |n: usize| -> Result<Vec<F>, ModelError> {
            let nbytes = n * width;
            if rest.len() < nbytes {
                return Err(bad("truncated payload"));
            }
            let (head, tail) = rest.split_at(nbytes);
            rest = tail;
            F::from_le_bytes_slice(head).ok_or_else(|| bad("payload decode"))
        };
        let theta = take(header.param_count)?;
        let mut bn = Vec::with_capacity(header.bn_channels.len());
        for &c in &header.bn_channels {
            let mean = take(c)?;
            let var = take(c)?;
            bn.push(BnStats { mean, var });
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let model = ModelState::from_parts(header.spec, theta, Some(bn))?;
        Ok(Self { model, epoch: header.epoch, rng: header.rng })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
