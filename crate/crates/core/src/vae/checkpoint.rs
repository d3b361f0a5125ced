//! `.vaeckpt` container:
//!
//! ```text
//! "VAEC" | version: u32 LE | header length: u64 LE | JSON header
//!        | parameter blobs, little-endian, in header order | CRC32 (u32 LE)
//! ```
//!
//! The trailing CRC covers every preceding byte. The header also carries a
//! CRC of the blob section alone, reported as the content checksum.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Vae, VaeConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"VAEC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// Trained weights, batchnorm statistics and training history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: VaeConfig,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub tensors: Vec<NamedTensor<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    config: VaeConfig,
    best_epoch: usize,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
    blob_crc32: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &Vae<T>, history: Vec<EpochRecord>, best_epoch: usize) -> Self {
        Self {
            config: model.config().clone(),
            history,
            best_epoch,
            tensors: model
                .tensors()
                .into_iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds the network and loads every stored tensor into it.
    pub fn model(&self) -> Result<Vae<T>> {
        let mut model = Vae::new(self.config.clone())?;
        let slots = model.tensors_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                slots.len(),
                self.tensors.len()
            )));
        }
        for (slot, t) in slots.into_iter().zip(&self.tensors) {
            if slot.name != t.name || slot.shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match model slot {} {:?}",
                    t.name, t.shape, slot.name, slot.shape
                )));
            }
            slot.value.clone_from(&t.values);
        }
        Ok(model)
    }

    fn blobs(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(self.tensors.iter().map(|t| t.values.len() * T::BYTES).sum());
        for t in &self.tensors {
            for &v in &t.values {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blobs = self.blobs();
        let header = Header {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            config: self.config.clone(),
            best_epoch: self.best_epoch,
            history: self.history.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            blob_crc32: crc32fast::hash(&blobs),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + blobs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blobs);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad("missing VAEC magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(bad("CRC32 mismatch, file is corrupt"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&body[16..header_end])?;
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} values, expected {}",
                header.dtype,
                T::DTYPE
            )));
        }
        let blobs = &body[header_end..];
        if crc32fast::hash(blobs) != header.blob_crc32 {
            return Err(bad("blob checksum mismatch"));
        }
        let expected: usize = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum::<usize>()
            * T::BYTES;
        if blobs.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} blob bytes, found {}",
                blobs.len()
            )));
        }
        let mut offset = 0;
        let tensors = header
            .tensors
            .into_iter()
            .map(|e| {
                let n: usize = e.shape.iter().product();
                let values = blobs[offset..offset + n * T::BYTES]
                    .chunks_exact(T::BYTES)
                    .map(T::read_le)
                    .collect();
                offset += n * T::BYTES;
                NamedTensor {
                    name: e.name,
                    shape: e.shape,
                    values,
                }
            })
            .collect();
        Ok(Self {
            config: header.config,
            history: header.history,
            best_epoch: header.best_epoch,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// CRC32 of the serialized parameter blobs.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.blobs())
    }

    /// Validation loss of the stored (best) epoch.
    pub fn best_val_loss(&self) -> Option<f64> {
        self.history
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .map(|r| r.val_loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint<f32> {
        let cfg = VaeConfig {
            latent_dim: 3,
            input_shape: [1, 32, 32],
            channels: [2, 2, 2, 2, 2],
            ..VaeConfig::default()
        };
        let model = Vae::<f32>::new(cfg).unwrap();
        let history = vec![EpochRecord {
            epoch: 1,
            train_loss: 0.1 + 0.2,
            val_loss: 1.0 / 3.0,
            val_recon: 0.25,
        }];
        Checkpoint::from_model(&model, history, 1)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = tiny();
        let a = ck.to_bytes().unwrap();
        let back = Checkpoint::<f32>::from_bytes(&a).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), a);
    }

    #[test]
    fn layout_starts_with_magic_and_version() {
        let bytes = tiny().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"VAEC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["dtype"], "f32");
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = tiny().to_bytes().unwrap();
        let mid = bytes.len() - 10;
        bytes[mid] ^= 0x40;
        assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let bytes = tiny().to_bytes().unwrap();
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn model_round_trips_through_checkpoint() {
        let ck = tiny();
        let model = ck.model().unwrap();
        assert_eq!(Checkpoint::from_model(&model, ck.history.clone(), 1), ck);
    }
}
