//! Model files: `u32` LE header length, JSON header, then the parameters as
//! little-endian `f32` in the model's flat order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectorError, LstmModel, ModelConfig, NormStats};
use crate::features::DetectorKind;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: DetectorKind,
    input_dim: usize,
    hidden_dim: usize,
    norm_stats: NormStats,
}

pub fn write_model<W: Write>(mut w: W, model: &LstmModel) -> Result<(), DetectorError> {
    let c = model.config();
    let header = Header { kind: c.kind, input_dim: c.input_dim, hidden_dim: c.hidden_dim, norm_stats: model.norm().clone() };
    let json = serde_json::to_vec(&header).map_err(|e| DetectorError::CorruptModel(e.to_string()))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut blob = Vec::with_capacity(model.params().len() * 4);
    for &p in model.params() {
        blob.extend_from_slice(&(p as f32).to_le_bytes());
    }
    w.write_all(&blob)?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<LstmModel, DetectorError> {
    let corrupt = |what: &str| DetectorError::CorruptModel(what.to_string());
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| corrupt("missing header length"))?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(corrupt("implausible header length"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| DetectorError::CorruptModel(e.to_string()))?;
    let config = ModelConfig { kind: header.kind, input_dim: header.input_dim, hidden_dim: header.hidden_dim };
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() != config.param_count() * 4 {
        return Err(DetectorError::CorruptModel(format!(
            "weight blob has {} bytes, expected {}",
            blob.len(),
            config.param_count() * 4
        )));
    }
    let params = blob.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    LstmModel::from_parts(config, params, header.norm_stats).map_err(|e| DetectorError::CorruptModel(e.to_string()))
}

pub fn save_model(model: &LstmModel, path: impl AsRef<Path>) -> Result<(), DetectorError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

/// Loads a model, checking it is a detector of the `expected` kind with the
/// matching input size.
pub fn load_model(path: impl AsRef<Path>, expected: DetectorKind) -> Result<LstmModel, DetectorError> {
    let model = read_model(BufReader::new(File::open(path)?))?;
    if model.kind() != expected {
        return Err(DetectorError::KindMismatch { expected, found: model.kind() });
    }
    if model.config().input_dim != expected.dim() {
        return Err(DetectorError::CorruptModel(format!(
            "{} model with input size {}",
            expected,
            model.config().input_dim
        )));
    }
    Ok(model)
}
