//! Dataset manifests: one JSON object per line with keys `id`, `gloss`,
//! `pose_path`, `hamer_path`, `smplerx_path`; tensor paths are relative to the
//! manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_modality_file, GlossSequence, Modality, SampleRecord, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Split> {
        match tag {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn manifest_name(self) -> String {
        format!("{}.jsonl", self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub gloss: String,
    pub pose_path: String,
    pub hamer_path: String,
    pub smplerx_path: String,
}

impl ManifestEntry {
    pub fn path_for(&self, modality: Modality) -> &str {
        match modality {
            Modality::Pose => &self.pose_path,
            Modality::Hamer => &self.hamer_path,
            Modality::Smplerx => &self.smplerx_path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

/// Write `<dir>/<split>.jsonl`, one entry per line, stable field order.
pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<PathBuf> {
    let path = dir.join(manifest.split.manifest_name());
    let mut out = String::new();
    for entry in &manifest.entries {
        let line = serde_json::to_string(entry).map_err(|e| Error::json(&path, e))?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Read and validate a manifest: parseable lines, unique ids, and every
/// referenced tensor file present on disk.
pub fn read_manifest(path: &Path, split: Split) -> Result<DatasetManifest> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::BadManifest {
                path: path.to_path_buf(),
                reason: "manifest file not found".into(),
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    let mut seen_ids: Vec<String> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::BadManifest {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        if seen_ids.iter().any(|id| id == &entry.id) {
            return Err(Error::DuplicateId { id: entry.id });
        }
        seen_ids.push(entry.id.clone());
        for modality in Modality::ALL {
            let tensor_path = base.join(entry.path_for(modality));
            if !tensor_path.is_file() {
                return Err(Error::MissingTensorFile { path: tensor_path });
            }
        }
        entries.push(entry);
    }
    Ok(DatasetManifest { split, entries })
}

/// Load every sample of a split: manifest + all three tensors per entry,
/// strict-validated, with gloss text encoded through `vocab`.
pub fn load_split(data_dir: &Path, split: Split, vocab: &Vocabulary) -> Result<Vec<SampleRecord>> {
    let manifest_path = data_dir.join(split.manifest_name());
    let manifest = read_manifest(&manifest_path, split)?;
    if manifest.entries.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let pose = read_modality_file(&base.join(&entry.pose_path), Modality::Pose)?;
        let hamer = read_modality_file(&base.join(&entry.hamer_path), Modality::Hamer)?;
        let smplerx = read_modality_file(&base.join(&entry.smplerx_path), Modality::Smplerx)?;
        let sample = SampleRecord {
            id: entry.id.clone(),
            gloss_text: entry.gloss.clone(),
            gloss: GlossSequence::new(vocab.encode(&entry.gloss)?)?,
            pose,
            hamer,
            smplerx,
        };
        sample.validate_alignment()?;
        samples.push(sample);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_modality_file, ModalitySequence, POSE_DIM};
    use ndarray::Array2;

    fn fake_entry(dir: &Path, id: &str) -> ManifestEntry {
        use crate::corpus::{HAMER_DIM, SMPLERX_DIM};
        let mk = |modality: Modality, dim: usize| {
            let rel = format!("{id}.{}.stns", modality.tag());
            let frames = Array2::from_elem((3, dim), 0.25f32);
            let seq = ModalitySequence::with_end_marker(modality, frames).unwrap();
            write_modality_file(&dir.join(&rel), &seq).unwrap();
            rel
        };
        ManifestEntry {
            id: id.to_string(),
            gloss: "A B".to_string(),
            pose_path: mk(Modality::Pose, POSE_DIM),
            hamer_path: mk(Modality::Hamer, HAMER_DIM),
            smplerx_path: mk(Modality::Smplerx, SMPLERX_DIM),
        }
    }

    #[test]
    fn manifest_round_trip_and_jsonl_shape() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            split: Split::Train,
            entries: vec![fake_entry(dir.path(), "s0"), fake_entry(dir.path(), "s1")],
        };
        let path = write_manifest(dir.path(), &manifest).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["id", "gloss", "pose_path", "hamer_path", "smplerx_path"] {
            assert!(first.get(key).is_some(), "missing key {key}");
        }
        let back = read_manifest(&path, Split::Train).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            split: Split::Train,
            entries: vec![fake_entry(dir.path(), "dup"), fake_entry(dir.path(), "dup")],
        };
        let path = write_manifest(dir.path(), &manifest).unwrap();
        assert!(matches!(
            read_manifest(&path, Split::Train),
            Err(Error::DuplicateId { .. })
        ));
    }

    #[test]
    fn missing_tensor_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut entry = fake_entry(dir.path(), "s0");
        entry.hamer_path = "nope.stns".to_string();
        let manifest = DatasetManifest {
            split: Split::Dev,
            entries: vec![entry],
        };
        let path = write_manifest(dir.path(), &manifest).unwrap();
        assert!(matches!(
            read_manifest(&path, Split::Dev),
            Err(Error::MissingTensorFile { .. })
        ));
    }
}
