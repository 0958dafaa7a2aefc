//! Model checkpoints: one file holding JSON metadata (kind, config, step,
//! vocabulary) plus every parameter tensor in the same binary tensor encoding
//! used for corpus data, concatenated behind an index table.
//!
//! Layout: 6-byte magic, little-endian u32 metadata length, metadata JSON,
//! then the tensor section.  Tensors are stored as f32 in name order; the
//! index in the metadata records each tensor's byte offset and length within
//! the tensor section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{decode_stns, encode_stns, Vocabulary};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SNCK1\0";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Encoder + three decoders (+ correction stage when enabled).
    Generator,
    /// Back-translation recognizer.
    Recognizer,
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointKind::Generator => write!(f, "generator"),
            CheckpointKind::Recognizer => write!(f, "recognizer"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorIndexEntry {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    format: u32,
    kind: CheckpointKind,
    config: RunConfig,
    step: usize,
    /// Corpus tokens (reserved symbols excluded); the vocabulary is rebuilt
    /// from these on load.
    vocab: Vec<String>,
    tensors: Vec<TensorIndexEntry>,
}

/// A loaded or about-to-be-saved checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: RunConfig,
    pub step: usize,
    pub vocab: Vocabulary,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    /// Parameters cast to the requested compute precision.
    pub fn params_as<T: Scalar>(&self) -> ParamStore<T> {
        self.params.cast::<T>()
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut tensor_section: Vec<u8> = Vec::new();
    let mut index = Vec::new();
    for (name, value) in ckpt.params.iter() {
        let blob = encode_stns(value, None);
        index.push(TensorIndexEntry {
            name: name.clone(),
            offset: tensor_section.len(),
            len: blob.len(),
        });
        tensor_section.extend_from_slice(&blob);
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT,
        kind: ckpt.kind,
        config: ckpt.config.clone(),
        step: ckpt.step,
        vocab: ckpt.vocab.corpus_tokens(),
        tensors: index,
    };
    let meta_bytes = serde_json::to_vec(&meta).map_err(|e| Error::json(path, e))?;
    let mut out = Vec::with_capacity(10 + meta_bytes.len() + tensor_section.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&tensor_section);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadCheckpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingTensorFile {
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 {
        return Err(bad(path, "file too short for header"));
    }
    if &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(bad(path, "bad magic (not a checkpoint file)"));
    }
    let meta_start = CHECKPOINT_MAGIC.len() + 4;
    let meta_len =
        u32::from_le_bytes(bytes[CHECKPOINT_MAGIC.len()..meta_start].try_into().unwrap()) as usize;
    if bytes.len() < meta_start + meta_len {
        return Err(bad(path, "metadata extends past end of file"));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[meta_start..meta_start + meta_len])
        .map_err(|e| bad(path, format!("metadata parse failure: {e}")))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(bad(path, format!("unsupported format version {}", meta.format)));
    }
    meta.config
        .validate()
        .map_err(|e| bad(path, format!("embedded config invalid: {e}")))?;
    let tensor_section = &bytes[meta_start + meta_len..];
    let mut params = ParamStore::new();
    for entry in &meta.tensors {
        let end = entry.offset.checked_add(entry.len);
        let Some(end) = end else {
            return Err(bad(path, format!("tensor {} index overflow", entry.name)));
        };
        if end > tensor_section.len() {
            return Err(bad(
                path,
                format!(
                    "tensor {} spans {}..{} beyond section of {} bytes",
                    entry.name,
                    entry.offset,
                    end,
                    tensor_section.len()
                ),
            ));
        }
        if params.contains(&entry.name) {
            return Err(bad(path, format!("duplicate tensor {}", entry.name)));
        }
        let (value, _) = decode_stns(&tensor_section[entry.offset..end], path)?;
        params.insert(entry.name.clone(), value);
    }
    Ok(Checkpoint {
        kind: meta.kind,
        config: meta.config,
        step: meta.step,
        vocab: Vocabulary::from_corpus_tokens(meta.vocab),
        params,
    })
}
