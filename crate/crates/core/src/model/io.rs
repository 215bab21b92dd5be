//! Parameter files.
//!
//! Layout:
//!
//! ```text
//! BITENET-PARAMS 1\n
//! {header JSON}\n
//! payload
//! ```
//!
//! The header records the element type, the model configuration, the
//! vocabulary (with its hash), the name and shape of every array in visiting
//! order, and the byte length and SHA-256 of the payload. The payload is the
//! arrays' values back to back, little-endian, row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::Params;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{ParamTree, Scalar, Tensor};

pub const MAGIC: &str = "BITENET-PARAMS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    dtype: String,
    config: ModelConfig,
    vocab_hash: String,
    vocabulary: Vec<String>,
    arrays: Vec<ArrayHeader>,
    payload_bytes: usize,
    payload_sha256: String,
}

/// Everything a parameter file carries.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamFile<T> {
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub params: Params<T>,
}

impl<T: Scalar> ParamFile<T> {
    /// Refuses a dataset whose vocabulary differs from the stored one.
    pub fn check_vocabulary(&self, dataset: &Vocabulary) -> Result<()> {
        let (stored, actual) = (self.vocabulary.hash(), dataset.hash());
        if stored != actual {
            return Err(Error::VocabMismatch { stored, actual });
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_params<T: Scalar>(params: &Params<T>, config: &ModelConfig, vocab: &Vocabulary) -> Result<Vec<u8>> {
    let expected = Params::<T>::zeros(config, vocab.id_space());
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    let mut mismatch = None;
    let layout = expected.named();
    let stored = params.named();
    if layout.len() != stored.len() {
        return Err(Error::Shape(format!(
            "parameters hold {} arrays, configuration implies {}",
            stored.len(),
            layout.len()
        )));
    }
    for ((name, t), (_, want)) in stored.iter().zip(&layout) {
        if t.shape() != want.shape() {
            mismatch.get_or_insert_with(|| format!("{name}: {:?} vs {:?}", t.shape(), want.shape()));
        }
        arrays.push(ArrayHeader {
            name: name.clone(),
            shape: t.shape().to_vec(),
        });
        for &v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes_vec());
        }
    }
    if let Some(m) = mismatch {
        return Err(Error::Shape(format!("parameters do not match configuration: {m}")));
    }
    let header = Header {
        version: FORMAT_VERSION,
        dtype: T::DTYPE.into(),
        config: config.clone(),
        vocab_hash: vocab.hash(),
        vocabulary: vocab.codes().to_vec(),
        arrays,
        payload_bytes: payload.len(),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let mut out = format!("{MAGIC} {FORMAT_VERSION}\n").into_bytes();
    out.extend(serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?);
    out.push(b'\n');
    out.extend(payload);
    Ok(out)
}

pub fn decode_params<T: Scalar>(bytes: &[u8]) -> Result<ParamFile<T>> {
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    let magic = lines.next().unwrap_or_default();
    if magic != format!("{MAGIC} {FORMAT_VERSION}").as_bytes() {
        return Err(Error::Format(format!(
            "expected `{MAGIC} {FORMAT_VERSION}` header line"
        )));
    }
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Format("missing header".into()))?;
    let payload = lines
        .next()
        .ok_or_else(|| Error::Format("missing payload".into()))?;
    let header: Header =
        serde_json::from_slice(header_line).map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "file stores {} values, {} requested",
            header.dtype,
            T::DTYPE
        )));
    }
    if payload.len() != header.payload_bytes {
        return Err(Error::Format(format!(
            "payload is {} bytes, header promises {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::Format("payload checksum mismatch".into()));
    }
    header.config.validate()?;
    let vocabulary = Vocabulary::from_codes(header.vocabulary)?;
    if vocabulary.hash() != header.vocab_hash {
        return Err(Error::Format("stored vocabulary does not match its hash".into()));
    }

    let mut params = Params::<T>::zeros(&header.config, vocabulary.id_space());
    let width = T::byte_width();
    let mut offset = 0;
    let mut arrays = header.arrays.iter();
    let mut failure = None;
    params.visit_mut("", &mut |name, t: &mut Tensor<T>| {
        if failure.is_some() {
            return;
        }
        match arrays.next() {
            Some(a) if a.name == name && a.shape == t.shape() => {
                for v in t.data_mut() {
                    *v = T::from_le_slice(&payload[offset..offset + width]);
                    offset += width;
                }
            }
            Some(a) => {
                failure = Some(format!(
                    "array `{}` {:?} where `{name}` {:?} was expected",
                    a.name,
                    a.shape,
                    t.shape()
                ))
            }
            None => failure = Some(format!("array `{name}` missing")),
        }
    });
    if let Some(f) = failure {
        return Err(Error::Format(f));
    }
    if arrays.next().is_some() || offset != payload.len() {
        return Err(Error::Format("unexpected trailing arrays".into()));
    }
    Ok(ParamFile {
        config: header.config,
        vocabulary,
        params,
    })
}

pub fn save_params<T: Scalar>(
    path: &Path,
    params: &Params<T>,
    config: &ModelConfig,
    vocab: &Vocabulary,
) -> Result<()> {
    let bytes = encode_params(params, config, vocab)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<ParamFile<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_params;

    fn fixture() -> (Params<f32>, ModelConfig, Vocabulary) {
        let cfg = ModelConfig {
            dim: 8,
            heads: 2,
            interval_days: 30,
            ..ModelConfig::default()
        };
        let vocab = Vocabulary::new(["dx:1", "dx:2", "px:3"]).unwrap();
        let p = init_params::<f32>(&cfg, vocab.id_space(), 9).unwrap();
        (p, cfg, vocab)
    }

    #[test]
    fn round_trip_is_exact() {
        let (p, cfg, vocab) = fixture();
        let bytes = encode_params(&p, &cfg, &vocab).unwrap();
        let back = decode_params::<f32>(&bytes).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.config, cfg);
        assert_eq!(back.vocabulary, vocab);
        assert_eq!(encode_params(&back.params, &cfg, &vocab).unwrap(), bytes);
    }

    #[test]
    fn truncated_or_corrupt_files_fail() {
        let (p, cfg, vocab) = fixture();
        let bytes = encode_params(&p, &cfg, &vocab).unwrap();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_params::<f32>(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(decode_params::<f32>(&flipped), Err(Error::Format(_))));
        assert!(decode_params::<f64>(&bytes).is_err());
    }

    #[test]
    fn foreign_vocabulary_refused() {
        let (p, cfg, vocab) = fixture();
        let file = decode_params::<f32>(&encode_params(&p, &cfg, &vocab).unwrap()).unwrap();
        assert!(file.check_vocabulary(&vocab).is_ok());
        let other = Vocabulary::new(["dx:1", "dx:2", "px:4"]).unwrap();
        assert!(matches!(
            file.check_vocabulary(&other),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn layout_must_match_config() {
        let (p, cfg, vocab) = fixture();
        let wider = ModelConfig { dim: 16, ..cfg };
        assert!(encode_params(&p, &wider, &vocab).is_err());
    }
}
