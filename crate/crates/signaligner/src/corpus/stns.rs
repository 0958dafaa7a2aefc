//! Tensor file format for frame matrices and checkpoint parameters.
//!
//! Layout: 6-byte magic `STNS1\0`, u32 little-endian JSON-header length, the
//! UTF-8 JSON header (`dtype`, `shape`, optional `modality`), then the payload
//! as row-major little-endian f32 — exactly `rows * cols * 4` bytes.  Reads
//! and writes round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Modality, ModalitySequence};
use crate::error::{Error, Result};

pub const STNS_MAGIC: &[u8; 6] = b"STNS1\0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StnsHeader {
    pub dtype: String,
    pub shape: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modality: Option<String>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Serialize a tensor into the container byte layout.
pub fn encode_stns(data: &Array2<f32>, modality: Option<Modality>) -> Vec<u8> {
    let header = StnsHeader {
        dtype: "f32".to_string(),
        shape: [data.nrows(), data.ncols()],
        modality: modality.map(|m| m.tag().to_string()),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(10 + header_json.len() + data.len() * 4);
    out.extend_from_slice(STNS_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for &v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a tensor from container bytes.  `origin` is used in error messages.
pub fn decode_stns(bytes: &[u8], origin: &Path) -> Result<(Array2<f32>, StnsHeader)> {
    if bytes.len() < 10 {
        return Err(malformed(origin, "file shorter than magic + header length"));
    }
    if &bytes[..6] != STNS_MAGIC {
        return Err(malformed(origin, format!("bad magic {:?}", &bytes[..6])));
    }
    let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let header_end = 10usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| malformed(origin, "header length exceeds file size"))?;
    let header: StnsHeader = serde_json::from_slice(&bytes[10..header_end])
        .map_err(|e| malformed(origin, format!("header is not valid JSON: {e}")))?;
    if header.dtype != "f32" {
        return Err(malformed(origin, format!("unsupported dtype {:?}", header.dtype)));
    }
    let [rows, cols] = header.shape;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| malformed(origin, "shape overflows"))?;
    let payload = &bytes[header_end..];
    if payload.len() != expected {
        return Err(malformed(
            origin,
            format!("payload is {} bytes, shape {:?} needs {}", payload.len(), header.shape, expected),
        ));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for chunk in payload.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    let data = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| malformed(origin, format!("shape error: {e}")))?;
    Ok((data, header))
}

pub fn write_stns(path: &Path, data: &Array2<f32>, modality: Option<Modality>) -> Result<()> {
    let bytes = encode_stns(data, modality);
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_stns(path: &Path) -> Result<(Array2<f32>, StnsHeader)> {
    let mut file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingTensorFile {
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    decode_stns(&bytes, path)
}

/// Write one modality stream (frames only; continuation flags are implied by
/// the end-of-sequence convention and reconstructed on read).
pub fn write_modality_file(path: &Path, seq: &ModalitySequence) -> Result<()> {
    write_stns(path, &seq.frames, Some(seq.modality))
}

/// Read a modality stream, checking the declared modality and channel width.
pub fn read_modality_file(path: &Path, expected: Modality) -> Result<ModalitySequence> {
    let (data, header) = read_stns(path)?;
    match header.modality.as_deref() {
        Some(tag) if tag == expected.tag() => {}
        Some(other) => {
            return Err(Error::shape(
                format!("modality tag in {}", path.display()),
                expected.tag(),
                other,
            ))
        }
        None => {
            return Err(malformed(path, "missing modality tag"));
        }
    }
    if data.ncols() != expected.dim() {
        return Err(Error::shape(
            format!("{} width in {}", expected.tag(), path.display()),
            expected.dim(),
            data.ncols(),
        ));
    }
    let seq = ModalitySequence::with_end_marker(expected, data)?;
    seq.validate_strict()?;
    Ok(seq)
}

/// Path helper: tensors live under `tensors/<split>/<sample id>.<tag>.stns`.
pub fn tensor_rel_path(split: &str, id: &str, modality: Modality) -> PathBuf {
    PathBuf::from("tensors")
        .join(split)
        .join(format!("{id}.{}.stns", modality.tag()))
}
