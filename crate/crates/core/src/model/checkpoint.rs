//! Checkpoint file: `NBCKPT01`, a little-endian u64 header length, a JSON
//! header, then every parameter as a little-endian f32.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Layout, ModelConfig, ModelError, TransformerParams};
use crate::fsio::atomic_write;
use crate::numeral::{NumeralSystem, Vocabulary};

const MAGIC: &[u8; 8] = b"NBCKPT01";
const FORMAT: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<NumeralSystem>,
    pub layout: Layout,
    pub format: String,
    /// Hex SHA-256 of the payload bytes.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: TransformerParams<f32>,
}

fn payload(params: &TransformerParams<f32>) -> Vec<u8> {
    params.data.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn save_checkpoint(
    params: &TransformerParams<f32>,
    system: Option<NumeralSystem>,
    path: &Path,
) -> Result<(), ModelError> {
    let body = payload(params);
    let header = CheckpointHeader {
        config: params.config.clone(),
        system,
        layout: params.layout.clone(),
        format: FORMAT.to_string(),
        checksum: hex::encode(Sha256::digest(&body)),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(16 + json.len() + body.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&body);
    atomic_write(path, &bytes).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let shown = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io { path: shown.clone(), source })?;
    let corrupt = |reason: String| ModelError::Corrupt { path: shown.clone(), reason };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing checkpoint magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    if header.format != FORMAT {
        return Err(corrupt(format!("unsupported numeric format {}", header.format)));
    }
    let body = &bytes[body_start..];
    if hex::encode(Sha256::digest(body)) != header.checksum {
        return Err(corrupt("payload checksum mismatch".into()));
    }
    header.config.validate().map_err(|e| corrupt(e.to_string()))?;
    let expected = Layout::for_config(&header.config);
    if expected != header.layout {
        return Err(corrupt("parameter layout does not match the model configuration".into()));
    }
    if body.len() != expected.total * 4 {
        return Err(corrupt(format!("payload holds {} bytes, layout needs {}", body.len(), expected.total * 4)));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let params = TransformerParams::from_data(header.config.clone(), data).map_err(|e| corrupt(e.to_string()))?;
    if !params.all_finite() {
        return Err(corrupt("non-finite parameter values".into()));
    }
    Ok(Checkpoint { header, params })
}

/// Loads a checkpoint and rejects it unless it fits `vocab`.
pub fn load_checkpoint_for(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint, ModelError> {
    let ckpt = load_checkpoint(path)?;
    ckpt.params.config.check_vocab(vocab)?;
    if let Some(sys) = ckpt.header.system {
        if sys != vocab.system {
            return Err(ModelError::Config(format!(
                "checkpoint was trained for base {}, not base {}",
                sys.base(),
                vocab.system.base()
            )));
        }
    }
    Ok(ckpt)
}
