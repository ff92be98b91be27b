//! Checkpoint files.
//!
//! Layout: the magic line `AUPROBE-CHECKPOINT`, one line of JSON header
//! (format version, precision, model config, tensor names and shapes, payload
//! length), then the raw little-endian IEEE-754 parameter buffers in header
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, Network};
use crate::data::hex;
use crate::tensor::{Real, PRECISION};

pub const MAGIC: &[u8] = b"AUPROBE-CHECKPOINT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    precision: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
}

const REAL_BYTES: usize = std::mem::size_of::<Real>();

/// Serialises a config-built network.
pub fn to_bytes(net: &Network) -> Result<Vec<u8>, ModelError> {
    let config = net
        .config()
        .ok_or_else(|| {
            ModelError::Checkpoint("only networks built from a config can be saved".into())
        })?
        .clone();
    let params = net.parameters();
    let tensors = params
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let payload_bytes = params.iter().map(|(_, t)| t.len() * REAL_BYTES).sum();
    let header = Header {
        format_version: FORMAT_VERSION,
        precision: PRECISION.to_string(),
        config,
        tensors,
        payload_bytes,
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header).expect("header serialises"));
    out.push(b'\n');
    out.reserve(payload_bytes);
    for (_, t) in params {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network, ModelError> {
    let corrupt = |m: &str| ModelError::Checkpoint(m.to_string());
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| corrupt("missing checkpoint magic line"))?;
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(&rest[..newline])
        .map_err(|e| ModelError::Checkpoint(format!("malformed header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    if header.precision != PRECISION {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint stores {} parameters but this build uses {PRECISION}",
            header.precision
        )));
    }
    let payload = &rest[newline + 1..];
    if payload.len() != header.payload_bytes {
        return Err(ModelError::Checkpoint(format!(
            "payload is {} bytes, header declares {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    let mut net = Network::build(&header.config)?;
    {
        let expected = net.parameters();
        if expected.len() != header.tensors.len() {
            return Err(corrupt("tensor count does not match the model config"));
        }
        for ((name, t), entry) in expected.iter().zip(&header.tensors) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "layer {}: checkpoint has {} {:?}, config implies {:?}",
                    name,
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
        }
    }
    let mut chunks = payload.chunks_exact(REAL_BYTES);
    for t in net.parameters_mut() {
        for (v, c) in t.data_mut().iter_mut().zip(chunks.by_ref()) {
            *v = Real::from_le_bytes(c.try_into().expect("chunk width"));
        }
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, to_bytes(net)?).map_err(|e| ModelError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        ModelError::Checkpoint(m) => ModelError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and checks that it matches `expected` layer by layer.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Network, ModelError> {
    let net = load_checkpoint(path)?;
    let reference = Network::build(expected)?;
    let have = net.parameters();
    let want = reference.parameters();
    for (i, (name, t)) in want.iter().enumerate() {
        match have.get(i) {
            Some((n, h)) if n == name && h.shape() == t.shape() => {}
            Some((n, h)) => {
                return Err(ModelError::Checkpoint(format!(
                    "layer {name}: model expects shape {:?}, checkpoint has {n} {:?}",
                    t.shape(),
                    h.shape()
                )))
            }
            None => {
                return Err(ModelError::Checkpoint(format!(
                    "layer {name}: missing from checkpoint"
                )))
            }
        }
    }
    if have.len() != want.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint has {} parameter tensors, model expects {}",
            have.len(),
            want.len()
        )));
    }
    if net.config() != Some(expected) {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint config {:?} differs from requested {:?}",
            net.config(),
            expected
        )));
    }
    Ok(net)
}

/// SHA-256 of the serialised network, hex encoded.
pub fn network_hash(net: &Network) -> Result<String, ModelError> {
    Ok(hex(&Sha256::digest(to_bytes(net)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_size: 16,
            conv_channels: vec![2, 4],
            fc_hidden: 8,
            num_classes: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::build(&cfg()).unwrap();
        let path = dir.path().join("n.ckpt");
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
        assert_eq!(network_hash(&back).unwrap(), network_hash(&net).unwrap());
        assert_eq!(network_hash(&net).unwrap().len(), 64);
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = to_bytes(&Network::build(&cfg()).unwrap()).unwrap();
        let err = from_bytes(&bytes[..bytes.len() - 3])
            .unwrap_err()
            .to_string();
        assert!(err.contains("payload"), "{err}");
        assert!(from_bytes(b"not a checkpoint").is_err());
        let text = String::from_utf8_lossy(&bytes[MAGIC.len()..]).to_string();
        let header_end = text.find('\n').unwrap();
        let bumped = text[..header_end].replace("\"format_version\":1", "\"format_version\":9");
        let mut damaged = MAGIC.to_vec();
        damaged.extend(bumped.as_bytes());
        damaged.extend(&bytes[MAGIC.len() + header_end..]);
        assert!(from_bytes(&damaged)
            .unwrap_err()
            .to_string()
            .contains("format version"));
    }

    #[test]
    fn config_mismatch_names_the_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.ckpt");
        save_checkpoint(&Network::build(&cfg()).unwrap(), &path).unwrap();
        let mut other = cfg();
        other.conv_channels = vec![2, 5];
        let err = load_checkpoint_for(&path, &other).unwrap_err().to_string();
        assert!(err.contains("conv2.kernels"), "{err}");
        load_checkpoint_for(&path, &cfg()).unwrap();
        let mut seed_only = cfg();
        seed_only.seed = 99;
        assert!(load_checkpoint_for(&path, &seed_only).is_err());
    }

    #[test]
    fn only_config_built_networks_save() {
        let built = Network::build(&cfg()).unwrap();
        let parts = Network::from_parts(
            built.input_shape(),
            built.stages().to_vec(),
            built.classifier().cloned(),
        )
        .unwrap();
        assert!(to_bytes(&parts).is_err());
    }
}
