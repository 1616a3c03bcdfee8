//! Binary checkpoint format.
//!
//! ```text
//! "PIC2" | version: u32 LE | header_len: u32 LE | header (JSON) | arrays
//! ```
//!
//! The header carries the encoder and MRL configs, the step count, a digest
//! of the loss log, and the name and shape of every array. Arrays follow in
//! header order as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::mrl::MrlConfig;

pub const MAGIC: &[u8; 4] = b"PIC2";
pub const VERSION: u32 = 1;

const ARRAY_NAMES: [&str; 3] = ["embed_table", "proj_weight", "proj_bias"];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub mrl: MrlConfig,
    pub step: u64,
    pub loss_digest: String,
    /// Stored at `f32` precision.
    pub params: EncoderParams,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    encoder: EncoderConfig,
    mrl: MrlConfig,
    step: u64,
    loss_digest: String,
    arrays: Vec<ArrayMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

fn expected_shapes(config: &EncoderConfig) -> [Vec<usize>; 3] {
    [
        vec![config.vocab_size, config.hidden_dim],
        vec![config.hidden_dim, config.out_dim],
        vec![config.out_dim],
    ]
}

impl Checkpoint {
    /// Rounds `params` to `f32` so the in-memory checkpoint equals what a
    /// save/load round trip produces.
    pub fn new(
        encoder: EncoderConfig,
        mrl: MrlConfig,
        step: u64,
        loss_digest: String,
        mut params: EncoderParams,
    ) -> Result<Self> {
        params.check_shapes(&encoder)?;
        for t in params.tensors_mut() {
            for v in t {
                *v = f64::from(*v as f32);
            }
        }
        Ok(Self {
            encoder,
            mrl,
            step,
            loss_digest,
            params,
        })
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::new(self.encoder.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            encoder: self.encoder.clone(),
            mrl: self.mrl.clone(),
            step: self.step,
            loss_digest: self.loss_digest.clone(),
            arrays: ARRAY_NAMES
                .iter()
                .zip(expected_shapes(&self.encoder))
                .map(|(name, shape)| ArrayMeta {
                    name: name.to_string(),
                    shape,
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.params.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.tensors() {
            for &v in t {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let word = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or(Error::TruncatedFile)
        };
        let version = word(4)?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let header_len = word(8)? as usize;
        let header_end = 12 + header_len;
        let header_bytes = bytes.get(12..header_end).ok_or(Error::TruncatedFile)?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::HeaderShapeMismatch(format!("unreadable header: {e}")))?;
        header
            .encoder
            .validate()
            .map_err(|e| Error::HeaderShapeMismatch(e.to_string()))?;

        let want = expected_shapes(&header.encoder);
        if header.arrays.len() != want.len() {
            return Err(Error::HeaderShapeMismatch(format!(
                "{} arrays declared, expected {}",
                header.arrays.len(),
                want.len()
            )));
        }
        for ((meta, name), shape) in header.arrays.iter().zip(ARRAY_NAMES).zip(&want) {
            if meta.name != name || &meta.shape != shape {
                return Err(Error::HeaderShapeMismatch(format!(
                    "array `{}` {:?}, config implies `{name}` {shape:?}",
                    meta.name, meta.shape
                )));
            }
        }

        let declared: usize = header
            .arrays
            .iter()
            .map(|a| a.shape.iter().product::<usize>())
            .sum();
        let body = &bytes[header_end..];
        if body.len() < declared * 4 {
            return Err(Error::TruncatedFile);
        }
        if body.len() > declared * 4 {
            return Err(Error::HeaderShapeMismatch(format!(
                "{} trailing bytes after the declared arrays",
                body.len() - declared * 4
            )));
        }
        let flat: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        let params = EncoderParams::from_flat(&header.encoder, &flat)?;
        Ok(Self {
            encoder: header.encoder,
            mrl: header.mrl,
            step: header.step,
            loss_digest: header.loss_digest,
            params,
        })
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let enc = EncoderConfig {
            vocab_size: 32,
            hidden_dim: 4,
            out_dim: 8,
            ..Default::default()
        };
        let params = EncoderParams::init_uniform(&enc, 9, 0.05);
        Checkpoint::new(enc, MrlConfig::uniform(vec![4, 8]), 17, "abc".into(), params).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
        // No temp files left behind.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn truncated() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::TruncatedFile)));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(Error::TruncatedFile)));
    }

    #[test]
    fn header_claiming_wrong_length() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes().unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[12..12 + header_len].to_vec()).unwrap();
        let forged = header.replace("\"shape\":[8]", "\"shape\":[9]");
        assert_ne!(forged, header);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(forged.len() as u32).to_le_bytes());
        out.extend_from_slice(forged.as_bytes());
        out.extend_from_slice(&bytes[12 + header_len..]);
        assert!(matches!(Checkpoint::from_bytes(&out), Err(Error::HeaderShapeMismatch(_))));

        let mut padded = bytes.clone();
        padded.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(Checkpoint::from_bytes(&padded), Err(Error::HeaderShapeMismatch(_))));
    }
}
