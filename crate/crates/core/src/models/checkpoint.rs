//! Checkpoint file layout:
//!
//! ```text
//! BNFAKE-CHECKPOINT\n
//! <manifest as JSON>\n
//! --params--\n
//! u64 LE tensor count
//! per tensor: u64 LE element count, then f32 LE values
//! u32 LE CRC-32 of the parameter section
//! ```
//!
//! The format version is read before the checksum is verified, so a file
//! from a different version reports the version rather than a CRC failure.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, Model, ModelError, ModelSpec};
use crate::nnet::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"BNFAKE-CHECKPOINT\n";
const SEPARATOR: &[u8] = b"\n--params--\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub spec: ModelSpec,
    /// SHA-256 of the serialized vocabulary the model was trained with
    pub vocab_digest: String,
    /// SHA-256 of the serialized training configuration
    pub config_digest: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn encode_checkpoint(model: &Model<f32>, vocab_digest: &str, config_digest: &str) -> Vec<u8> {
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        spec: model.spec().clone(),
        vocab_digest: vocab_digest.to_string(),
        config_digest: config_digest.to_string(),
        tensors: model
            .params()
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec_pretty(&manifest).expect("manifest serializes"));
    out.extend_from_slice(SEPARATOR);
    let body_start = out.len();
    out.extend((model.params().len() as u64).to_le_bytes());
    for p in model.params().iter() {
        out.extend((p.tensor.len() as u64).to_le_bytes());
        for v in p.tensor.data() {
            out.extend(v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[body_start..]);
    out.extend(crc.to_le_bytes());
    out
}

pub fn save_checkpoint(
    model: &Model<f32>,
    vocab_digest: &str,
    config_digest: &str,
    path: &Path,
) -> Result<(), ModelError> {
    std::fs::write(path, encode_checkpoint(model, vocab_digest, config_digest))?;
    Ok(())
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(ModelError::ChecksumMismatch)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize, ModelError> {
        let b: [u8; 8] = self.take(8)?.try_into().expect("8 bytes");
        usize::try_from(u64::from_le_bytes(b))
            .map_err(|_| ModelError::Format("length overflow".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model<f32>, CheckpointManifest), ModelError> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| ModelError::Format("missing checkpoint header".into()))?;
    let sep = find(rest, SEPARATOR).ok_or(ModelError::ChecksumMismatch)?;
    let json = &rest[..sep];
    let probe: VersionProbe =
        serde_json::from_slice(json).map_err(|e| ModelError::Format(format!("manifest: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(ModelError::FormatVersionMismatch {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: CheckpointManifest =
        serde_json::from_slice(json).map_err(|e| ModelError::Format(format!("manifest: {e}")))?;

    let section = &rest[sep + SEPARATOR.len()..];
    if section.len() < 4 {
        return Err(ModelError::ChecksumMismatch);
    }
    let (body, trailer) = section.split_at(section.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(ModelError::ChecksumMismatch);
    }

    let mut model = build_model::<f32>(&manifest.spec, 0)?;
    let mut r = Reader { buf: body, pos: 0 };
    let count = r.u64()?;
    if count != model.params().len() || count != manifest.tensors.len() {
        return Err(ModelError::Format(format!(
            "{count} tensors stored, architecture needs {}",
            model.params().len()
        )));
    }
    for (p, entry) in model.params_mut().iter_mut().zip(&manifest.tensors) {
        if p.name != entry.name || p.tensor.shape() != entry.shape.as_slice() {
            return Err(ModelError::Format(format!(
                "tensor `{}` {:?} does not match architecture tensor `{}` {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.tensor.shape()
            )));
        }
        let n = r.u64()?;
        if n != p.tensor.len() {
            return Err(ModelError::Format(format!(
                "tensor `{}` has {n} values",
                entry.name
            )));
        }
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        p.tensor = Tensor::from_vec(&entry.shape, data).map_err(ModelError::Nn)?;
    }
    if r.pos != body.len() {
        return Err(ModelError::Format("trailing bytes after parameters".into()));
    }
    Ok((model, manifest))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointManifest), ModelError> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Arch, Hyperparams};

    fn small() -> Model<f32> {
        let mut h = Hyperparams::new(30, 8);
        h.embed_dim = 4;
        h.rnn_hidden = 3;
        h.conv_filters = 5;
        h.conv_width = 3;
        h.dense_units = vec![4, 2];
        build_model(&ModelSpec::named(Arch::CnnLstm, &h), 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small();
        let bytes = encode_checkpoint(&m, "v", "c");
        let (back, manifest) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.vocab_digest, "v");
        assert_eq!(encode_checkpoint(&back, "v", "c"), bytes);
    }

    #[test]
    fn version_checked_before_checksum() {
        let bytes = encode_checkpoint(&small(), "v", "c");
        let text = String::from_utf8_lossy(&bytes).into_owned();
        assert!(text.contains("\"format_version\": 1"));
        let mut altered = bytes.clone();
        let at = find(&altered, b"\"format_version\": 1").unwrap() + b"\"format_version\": ".len();
        altered[at] = b'2';
        let n = altered.len();
        altered[n - 1] ^= 0xFF;
        assert!(matches!(
            decode_checkpoint(&altered),
            Err(ModelError::FormatVersionMismatch {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = encode_checkpoint(&small(), "v", "c");
        for cut in [bytes.len() - 1, bytes.len() - 7, bytes.len() / 2 + 200] {
            assert!(
                matches!(
                    decode_checkpoint(&bytes[..cut]),
                    Err(ModelError::ChecksumMismatch)
                ),
                "cut {cut}"
            );
        }
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 20] ^= 1;
        assert!(matches!(
            decode_checkpoint(&flipped),
            Err(ModelError::ChecksumMismatch)
        ));
    }
}
