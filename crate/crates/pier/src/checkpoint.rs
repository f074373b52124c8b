//! Binary checkpoint format: versioned header, config echo, named parameter
//! blocks with raw little-endian f32 data, and a trailing checksum.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pier_core::checksum::checksum_bytes;
use pier_core::model::{FusedModel, ModelConfig, Variant};
use pier_core::training::Stage;

use crate::FormatError;

const MAGIC: &[u8; 8] = b"PIERCKPT";
pub const FORMAT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Field {
                path: self.path.clone(),
                line: 0,
                message: format!("checkpoint truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, FormatError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Field {
            path: self.path.clone(),
            line: 0,
            message: "checkpoint contains invalid UTF-8".into(),
        })
    }
}

fn config_pairs(config: &ModelConfig, stage: Stage) -> BTreeMap<String, String> {
    let mut kv = BTreeMap::new();
    kv.insert("n_enc_layers".into(), config.n_enc_layers.to_string());
    kv.insert("n_dec_layers".into(), config.n_dec_layers.to_string());
    kv.insert("d_model".into(), config.d_model.to_string());
    kv.insert("n_heads".into(), config.n_heads.to_string());
    kv.insert("d_ff".into(), config.d_ff.to_string());
    kv.insert("vocab_size".into(), config.vocab_size.to_string());
    kv.insert("max_seq_len".into(), config.max_seq_len.to_string());
    kv.insert(
        "adapter_bottleneck".into(),
        config.adapter_bottleneck.to_string(),
    );
    kv.insert("variant".into(), config.variant.as_str().into());
    kv.insert(
        "fusion_in_decoder".into(),
        config.fusion_in_decoder.to_string(),
    );
    kv.insert("bos_token".into(), config.bos_token.to_string());
    kv.insert("stage".into(), stage.as_str().into());
    kv
}

fn parse_config(
    kv: &BTreeMap<String, String>,
    path: &str,
) -> Result<(ModelConfig, Stage), FormatError> {
    let get = |k: &str| -> Result<&String, FormatError> {
        kv.get(k).ok_or_else(|| FormatError::Field {
            path: path.into(),
            line: 0,
            message: format!("checkpoint config missing key '{k}'"),
        })
    };
    let num = |k: &str| -> Result<usize, FormatError> {
        get(k)?.parse().map_err(|_| FormatError::Field {
            path: path.into(),
            line: 0,
            message: format!("checkpoint config key '{k}' is not a number"),
        })
    };
    let config = ModelConfig {
        n_enc_layers: num("n_enc_layers")?,
        n_dec_layers: num("n_dec_layers")?,
        d_model: num("d_model")?,
        n_heads: num("n_heads")?,
        d_ff: num("d_ff")?,
        vocab_size: num("vocab_size")?,
        max_seq_len: num("max_seq_len")?,
        adapter_bottleneck: num("adapter_bottleneck")?,
        variant: Variant::parse(get("variant")?).map_err(|e| FormatError::Field {
            path: path.into(),
            line: 0,
            message: e.to_string(),
        })?,
        fusion_in_decoder: get("fusion_in_decoder")? == "true",
        bos_token: num("bos_token")? as u32,
    };
    let stage = Stage::parse(get("stage")?).map_err(|e| FormatError::Field {
        path: path.into(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok((config, stage))
}

/// Serializes a model (with the stage that produced it) to bytes.
pub fn encode(model: &FusedModel<f32>, stage: Stage) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    let kv = config_pairs(&model.config, stage);
    push_u32(&mut out, kv.len() as u32);
    for (k, v) in &kv {
        push_str(&mut out, k);
        push_str(&mut out, v);
    }
    push_u32(&mut out, model.store.len() as u32);
    for (name, tensor) in model.store.iter() {
        push_str(&mut out, name);
        push_u32(&mut out, tensor.shape().len() as u32);
        for d in tensor.shape() {
            push_u64(&mut out, *d as u64);
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let ck = checksum_bytes(&out);
    push_u64(&mut out, ck.0);
    out
}

pub fn save(model: &FusedModel<f32>, stage: Stage, path: &Path) -> Result<(), FormatError> {
    fs::write(path, encode(model, stage)).map_err(|e| FormatError::io(path, e))
}

/// Parses a checkpoint, rejecting bad magic, version, checksum, or shape
/// mismatches. The model is rebuilt from the embedded config, then every
/// parameter block is matched by name.
pub fn decode(bytes: &[u8], path: &str) -> Result<(FusedModel<f32>, Stage), FormatError> {
    let field = |message: String| FormatError::Field {
        path: path.into(),
        line: 0,
        message,
    };
    if bytes.len() < MAGIC.len() + 12 {
        return Err(field("checkpoint too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if checksum_bytes(body).0 != stored {
        return Err(field("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
        path: path.to_string(),
    };
    if r.take(8)? != MAGIC {
        return Err(field("bad magic: not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version {
            path: path.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n_kv = r.u32()? as usize;
    let mut kv = BTreeMap::new();
    for _ in 0..n_kv {
        let k = r.string()?;
        let v = r.string()?;
        kv.insert(k, v);
    }
    let (config, stage) = parse_config(&kv, path)?;
    let mut model = FusedModel::<f32>::new(config, 0).map_err(|e| field(e.to_string()))?;

    let n_params = r.u32()? as usize;
    if n_params != model.store.len() {
        return Err(field(format!(
            "checkpoint has {n_params} parameters, config implies {}",
            model.store.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..n_params {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| field(format!("unknown parameter '{name}' in checkpoint")))?;
        if model.store.tensor(id).shape() != shape.as_slice() {
            return Err(field(format!(
                "parameter '{name}' has shape {:?}, expected {:?}",
                shape,
                model.store.tensor(id).shape()
            )));
        }
        let tensor = pier_core::Tensor::from_vec(shape, data).map_err(|e| field(e.to_string()))?;
        model
            .store
            .set_tensor(id, tensor)
            .map_err(|e| field(e.to_string()))?;
        seen.insert(name);
    }
    if r.pos != body.len() {
        return Err(field("trailing bytes after parameter blocks".into()));
    }
    if seen.len() != n_params {
        return Err(field("duplicate parameter names in checkpoint".into()));
    }
    Ok((model, stage))
}

pub fn load(path: &Path) -> Result<(FusedModel<f32>, Stage), FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> FusedModel<f32> {
        FusedModel::new(ModelConfig::tiny(24), 9).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = sample_model();
        let bytes = encode(&model, Stage::Fusion);
        let (loaded, stage) = decode(&bytes, "mem").unwrap();
        assert_eq!(stage, Stage::Fusion);
        assert_eq!(
            loaded.store.checksum_group(""),
            model.store.checksum_group("")
        );
        assert_eq!(loaded.config, model.config);
        // re-encoding reproduces the bytes exactly
        assert_eq!(encode(&loaded, Stage::Fusion), bytes);
    }

    #[test]
    fn corrupted_byte_is_rejected() {
        let model = sample_model();
        let mut bytes = encode(&model, Stage::Base);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        assert!(decode(&bytes, "mem").is_err());
    }

    #[test]
    fn wrong_version_and_magic_are_loud() {
        let model = sample_model();
        let mut bytes = encode(&model, Stage::Base);
        // version lives right after the magic; patch and re-checksum
        bytes[8] = 99;
        let body_len = bytes.len() - 8;
        let ck = checksum_bytes(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&ck.0.to_le_bytes());
        assert!(matches!(
            decode(&bytes, "mem"),
            Err(FormatError::Version { found: 99, .. })
        ));

        let mut bytes = encode(&model, Stage::Base);
        bytes[0] = b'X';
        let ck = checksum_bytes(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&ck.0.to_le_bytes());
        assert!(decode(&bytes, "mem").is_err());
    }

    #[test]
    fn truncation_is_rejected() {
        let model = sample_model();
        let bytes = encode(&model, Stage::Base);
        assert!(decode(&bytes[..bytes.len() - 100], "mem").is_err());
    }
}
