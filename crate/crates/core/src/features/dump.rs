//! Binary feature matrices: a `u32` little-endian header length, a JSON
//! header, then `count × dim` little-endian `f32` values in row-major order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::FeatureError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub kind: String,
    pub dim: usize,
    pub hop_ms: u32,
    pub count: usize,
}

pub fn write_dump<W: Write>(mut w: W, kind: &str, hop_ms: u32, rows: &[Vec<f32>]) -> Result<(), FeatureError> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(FeatureError::MalformedDump(format!("row of length {} in a {dim}-wide matrix", bad.len())));
    }
    let header = DumpHeader { kind: kind.to_string(), dim, hop_ms, count: rows.len() };
    let json = serde_json::to_vec(&header).map_err(|e| FeatureError::MalformedDump(e.to_string()))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut body = Vec::with_capacity(rows.len() * dim * 4);
    for v in rows.iter().flatten() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_dump<R: Read>(mut r: R) -> Result<(DumpHeader, Vec<Vec<f32>>), FeatureError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: DumpHeader = serde_json::from_slice(&json).map_err(|e| FeatureError::MalformedDump(e.to_string()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != header.count * header.dim * 4 {
        return Err(FeatureError::MalformedDump(format!(
            "expected {} bytes of data, found {}",
            header.count * header.dim * 4,
            body.len()
        )));
    }
    let values: Vec<f32> = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let rows = if header.dim == 0 {
        vec![Vec::new(); header.count]
    } else {
        values.chunks_exact(header.dim).map(<[f32]>::to_vec).collect()
    };
    Ok((header, rows))
}
