//! Binary checkpoint format.
//!
//! ```text
//! "DFN1"  u32 version  u32 len  header JSON (architecture, config, best loss, classes)
//! 6 x f32 normalization (mean[3], std[3])
//! u32 tensor count, then per tensor:
//!   u32 name len, name, u32 rank, rank x u64 dims, product(dims) x f32
//! ```
//! All integers and floats little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, NormStats};
use crate::error::{Error, Result};
use crate::io_util::write_atomic_with;
use crate::nn::{ModelSpec, ParamStore, NUM_CLASSES};
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 4] = b"DFN1";
pub const FORMAT_VERSION: u32 = 1;

const MAX_HEADER: usize = 16 << 20;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamStore<f32>,
    pub norm: NormStats,
    pub config: TrainConfig,
    /// 1-based epoch the parameters were taken from.
    pub epoch: usize,
    pub best_val_loss: f64,
    /// Class code per output index.
    pub classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: ModelSpec,
    config: TrainConfig,
    epoch: usize,
    best_val_loss: f64,
    classes: Vec<String>,
}

pub fn class_codes() -> Vec<String> {
    ClassLabel::ALL
        .iter()
        .map(|c| c.code().to_string())
        .collect()
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        let header = Header {
            architecture: self.spec.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            best_val_loss: self.best_val_loss,
            classes: self.classes.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for v in self.norm.mean.iter().chain(&self.norm.std) {
            w.write_all(&v.to_le_bytes())?;
        }
        let tensors = self.params.named_tensors(&self.spec);
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut raw = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                raw.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&raw)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic bytes {magic:?}")));
        }
        let version = read_u32(r)?;
        if version > FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if version == 0 {
            return Err(Error::Checkpoint("format version 0 is invalid".into()));
        }
        let len = read_u32(r)? as usize;
        if len > MAX_HEADER {
            return Err(Error::Checkpoint(format!(
                "header length {len} is implausible"
            )));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.classes.len() != NUM_CLASSES {
            return Err(Error::Checkpoint(format!(
                "{} classes recorded, expected {NUM_CLASSES}",
                header.classes.len()
            )));
        }
        let mut norm = NormStats::identity();
        for v in norm.mean.iter_mut().chain(norm.std.iter_mut()) {
            *v = read_f32(r)?;
        }
        let count = read_u32(r)? as usize;
        let mut tensors = HashMap::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return Err(Error::Checkpoint("tensor name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n
                .filter(|&n| n <= 1 << 30)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        let params =
            ParamStore::from_named(&header.architecture, tensors).map_err(|e| match e {
                Error::Checkpoint(_) => e,
                other => Error::Checkpoint(other.to_string()),
            })?;
        Ok(Self {
            spec: header.architecture,
            params,
            norm,
            config: header.config,
            epoch: header.epoch,
            best_val_loss: header.best_val_loss,
            classes: header.classes,
        })
    }
}

fn read_u32(r: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut dyn Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut dyn Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

pub fn save_checkpoint(cp: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic_with(path, |w| cp.write_to(w))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Checkpoint::read_from(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_lesion_model;

    fn sample() -> Checkpoint {
        let (spec, params) = build_lesion_model(3).unwrap();
        Checkpoint {
            spec,
            params,
            norm: NormStats {
                mean: [0.7, 0.5, 0.55],
                std: [0.15, 0.2, 0.22],
            },
            config: TrainConfig::default(),
            epoch: 4,
            best_val_loss: 0.8125,
            classes: class_codes(),
        }
    }

    fn bytes(cp: &Checkpoint) -> Vec<u8> {
        let mut v = Vec::new();
        cp.write_to(&mut v).unwrap();
        v
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cp = sample();
        let raw = bytes(&cp);
        let back = Checkpoint::read_from(&mut raw.as_slice()).unwrap();
        assert_eq!(back, cp);
        for ((na, a), (nb, b)) in cp
            .params
            .named_tensors(&cp.spec)
            .iter()
            .zip(back.params.named_tensors(&back.spec))
        {
            assert_eq!(na, &nb);
            assert!(a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(bytes(&back), raw);
    }

    #[test]
    fn rejects_bad_magic_and_future_version() {
        let mut raw = bytes(&sample());
        raw[0] = b'X';
        assert!(matches!(
            Checkpoint::read_from(&mut raw.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        let mut raw = bytes(&sample());
        raw[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::read_from(&mut raw.as_slice()),
            Err(Error::Version {
                found: 2,
                supported: 1
            })
        ));
    }

    #[test]
    fn truncation_is_io_error() {
        let raw = bytes(&sample());
        for cut in [2, 10, raw.len() / 2, raw.len() - 1] {
            assert!(
                matches!(Checkpoint::read_from(&mut &raw[..cut]), Err(Error::Io(_))),
                "cut {cut}"
            );
        }
    }
}
