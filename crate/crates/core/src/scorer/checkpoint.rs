//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "CAPY"  u32 version  u32 featurizer_version  u64 feature_dim
//! f32 x feature_dim weights   f32 bias
//! u8 has_optimizer
//!   [u64 step   f32 x (feature_dim+1) m   f32 x (feature_dim+1) v]
//! ```
//!
//! A JSON sidecar at `<path>.json` records the training provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::FEATURIZER_VERSION;
use super::model::ScorerModel;
use super::optim::{OptimizerState, TrainConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CAPY";
pub const FORMAT_VERSION: u32 = 1;
const MAX_FEATURE_DIM: u64 = 1 << 31;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ScorerModel,
    pub optimizer: Option<OptimizerState>,
    /// Set when the checkpoint was written by a different featurizer; the
    /// weights load but their feature meaning may have drifted.
    pub featurizer_mismatch: bool,
}

pub fn encode(model: &ScorerModel, optimizer: Option<&OptimizerState>) -> Vec<u8> {
    let n = model.params().len();
    let mut out = Vec::with_capacity(4 + 4 + 4 + 8 + 4 * n + 1 + optimizer.map_or(0, |_| 8 + 8 * n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.featurizer_version.to_le_bytes());
    out.extend_from_slice(&(model.feature_dim() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    match optimizer {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.step.to_le_bytes());
            for x in s.m.iter().chain(&s.v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}: expected \"CAPY\" scorer checkpoint"
        )));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let featurizer_version = r.u32("featurizer_version")?;
    let dim = r.u64("feature_dim")?;
    if !dim.is_power_of_two() || dim > MAX_FEATURE_DIM {
        return Err(Error::Checkpoint(format!("feature_dim {dim} is not a power of two in range")));
    }
    let n = dim as usize + 1;
    // Size check before allocating so a forged header can't request gigabytes.
    if r.buf.len() < 4 * n + 1 {
        return Err(Error::Checkpoint("truncated file while reading parameters".into()));
    }
    let params = r.f32s(n, "parameters")?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    let optimizer = match r.take(1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            if r.buf.len() < 8 * n {
                return Err(Error::Checkpoint("truncated file while reading optimizer state".into()));
            }
            let m = r.f32s(n, "first moments")?;
            let v = r.f32s(n, "second moments")?;
            if m.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Checkpoint("invalid optimizer moments".into()));
            }
            Some(OptimizerState { step, m, v })
        }
        other => return Err(Error::Checkpoint(format!("invalid optimizer flag {other}"))),
    };
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
    }
    let featurizer_mismatch = featurizer_version != FEATURIZER_VERSION;
    if featurizer_mismatch {
        log::warn!(
            "checkpoint featurizer version {featurizer_version} differs from current {FEATURIZER_VERSION}"
        );
    }
    Ok(Checkpoint {
        model: ScorerModel::from_params(dim as usize, params, featurizer_version),
        optimizer,
        featurizer_mismatch,
    })
}

pub fn save_checkpoint(model: &ScorerModel, optimizer: Option<&OptimizerState>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model, optimizer)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Training provenance stored beside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub featurizer_version: u32,
    pub feature_dim: usize,
    pub train_config: Option<TrainConfig>,
    pub dataset: Option<String>,
    pub dataset_size: Option<usize>,
    pub init: String,
    pub final_loss: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let p = sidecar_path(path);
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(&p, text + "\n").map_err(|e| Error::io(p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ScorerModel {
        let mut m = ScorerModel::new(8).unwrap();
        for (i, w) in m.weights_mut().iter_mut().enumerate() {
            *w = (i as f32 - 3.3) * 0.1;
        }
        m.set_bias(-0.75);
        m
    }

    #[test]
    fn round_trip_bit_exact() {
        let m = model();
        let mut s = OptimizerState::new(9);
        s.step = 17;
        s.m[2] = 1e-7;
        s.v[8] = 3.5;
        let ck = decode(&encode(&m, Some(&s))).unwrap();
        assert_eq!(ck.model, m);
        assert_eq!(ck.optimizer, Some(s));
        assert!(!ck.featurizer_mismatch);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.capy");
        save_checkpoint(&m, None, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        let bits = |x: &ScorerModel| x.params().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.model), bits(&m));
        assert!(back.optimizer.is_none());
    }

    #[test]
    fn wrong_magic_names_format() {
        let mut bytes = encode(&model(), None);
        bytes[0] = b'X';
        let err = decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("CAPY"), "{err}");
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode(&model(), Some(&OptimizerState::new(9)));
        for cut in [0, 3, 10, 20, 40, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn featurizer_drift_flagged() {
        let mut m = model();
        m.featurizer_version = FEATURIZER_VERSION + 1;
        let ck = decode(&encode(&m, None)).unwrap();
        assert!(ck.featurizer_mismatch);
    }

    #[test]
    fn non_finite_parameters_rejected() {
        let mut bytes = encode(&model(), None);
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&bytes).unwrap_err().to_string().contains("non-finite"));
    }

    #[test]
    fn forged_dimension_rejected_without_allocation() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&FEATURIZER_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(1u64 << 30).to_le_bytes());
        assert!(decode(&bytes).is_err());
        let mut odd = bytes[..16].to_vec();
        odd.extend_from_slice(&12u64.to_le_bytes());
        assert!(decode(&odd).is_err());
    }
}
