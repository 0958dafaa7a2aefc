//! Data model for the three-stream sign corpus: gloss-token sequences paired
//! with time-major frame matrices for skeleton keypoints (`pose`), hand
//! parameters (`hamer`), and whole-body parameters (`smplerx`), plus the
//! tensor/manifest file formats and the synthetic corpus generator.

mod manifest;
mod stns;
mod toygen;
mod vocab;

pub use manifest::{
    load_split, read_manifest, write_manifest, DatasetManifest, ManifestEntry, Split,
};
pub use stns::{
    decode_stns, encode_stns, read_modality_file, read_stns, tensor_rel_path, write_modality_file,
    write_stns, StnsHeader, STNS_MAGIC,
};
pub use toygen::{
    base_skeleton, generate_toy_corpus, latent_for_gloss, layout, toy_vocabulary, ToyConfig,
    ToyProjections,
};
pub use vocab::{build_vocabulary, Vocabulary, BOS_ID, EOS_ID, PAD_ID};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Keypoints per skeleton frame; each contributes an (x, y) pair.
pub const KEYPOINTS: usize = 60;
/// Skeleton stream width: 60 keypoints x 2 normalized coordinates.
pub const POSE_DIM: usize = 120;
/// Hand stream width: per hand 16 joints x 3 rotations + 10 shape, two hands.
pub const HAMER_DIM: usize = 116;
/// Body stream width: 55 joints x 3 rotations + 10 shape + 10 expression.
pub const SMPLERX_DIM: usize = 185;

/// Rotation channels are kept within [-PI, PI]; shape/expression within [-3, 3].
pub const ROTATION_BOUND: f64 = std::f64::consts::PI;
pub const SHAPE_BOUND: f64 = 3.0;

/// One of the three generated streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Pose,
    Hamer,
    Smplerx,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Pose, Modality::Hamer, Modality::Smplerx];

    pub fn dim(self) -> usize {
        match self {
            Modality::Pose => POSE_DIM,
            Modality::Hamer => HAMER_DIM,
            Modality::Smplerx => SMPLERX_DIM,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Pose => "pose",
            Modality::Hamer => "hamer",
            Modality::Smplerx => "smplerx",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Modality> {
        match tag {
            "pose" => Some(Modality::Pose),
            "hamer" => Some(Modality::Hamer),
            "smplerx" => Some(Modality::Smplerx),
            _ => None,
        }
    }

    /// Per-channel admissible range `(lo, hi)` at channel index `i`.
    pub fn channel_bounds(self, i: usize) -> (f64, f64) {
        match self {
            Modality::Pose => (0.0, 1.0),
            Modality::Hamer => {
                // left rot 48 | left shape 10 | right rot 48 | right shape 10
                let within_hand = i % 58;
                if within_hand < 48 {
                    (-ROTATION_BOUND, ROTATION_BOUND)
                } else {
                    (-SHAPE_BOUND, SHAPE_BOUND)
                }
            }
            Modality::Smplerx => {
                if i < 165 {
                    (-ROTATION_BOUND, ROTATION_BOUND)
                } else {
                    (-SHAPE_BOUND, SHAPE_BOUND)
                }
            }
        }
    }
}

/// Gloss-token id sequence (ids index a [`Vocabulary`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlossSequence {
    pub ids: Vec<usize>,
}

impl GlossSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(GlossSequence { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Time-major frame matrix `[M, D]` for one modality plus a continuation
/// channel: `continue_flags[m]` is the probability (1/0 for ground truth) that
/// generation continues after frame `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySequence {
    pub modality: Modality,
    pub frames: Array2<f32>,
    pub continue_flags: Vec<f32>,
}

impl ModalitySequence {
    /// Wrap raw frames, setting ground-truth continuation flags (1 everywhere
    /// except 0 on the final frame).
    pub fn with_end_marker(modality: Modality, frames: Array2<f32>) -> Result<Self> {
        let m = frames.nrows();
        let mut flags = vec![1.0; m];
        if let Some(last) = flags.last_mut() {
            *last = 0.0;
        }
        Self::new(modality, frames, flags)
    }

    pub fn new(modality: Modality, frames: Array2<f32>, continue_flags: Vec<f32>) -> Result<Self> {
        if frames.ncols() != modality.dim() {
            return Err(Error::shape(
                format!("{} frame width", modality.tag()),
                modality.dim(),
                frames.ncols(),
            ));
        }
        if continue_flags.len() != frames.nrows() {
            return Err(Error::shape(
                format!("{} continuation channel length", modality.tag()),
                frames.nrows(),
                continue_flags.len(),
            ));
        }
        Ok(ModalitySequence {
            modality,
            frames,
            continue_flags,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    /// Frames cast to the requested compute precision.
    pub fn frames_as<T: crate::scalar::Scalar>(&self) -> Array2<T> {
        self.frames.mapv(|x| crate::scalar::s::<T>(x as f64))
    }

    /// Continuation flags as an M x 1 column in the requested precision.
    pub fn flags_column<T: crate::scalar::Scalar>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.continue_flags.len(), 1), |(m, _)| {
            crate::scalar::s::<T>(self.continue_flags[m] as f64)
        })
    }

    /// Full value-range and continuation-shape validation, used on corpus load
    /// and before writing generated output.
    pub fn validate_strict(&self) -> Result<()> {
        for ((_, j), &v) in self.frames.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::shape(
                    format!("{} frame values", self.modality.tag()),
                    "finite",
                    v,
                ));
            }
            let (lo, hi) = self.modality.channel_bounds(j);
            // Tiny slack absorbs f32 rounding of exactly-clamped values.
            if (v as f64) < lo - 1e-5 || (v as f64) > hi + 1e-5 {
                return Err(Error::shape(
                    format!("{} channel {} range", self.modality.tag(), j),
                    format!("[{lo}, {hi}]"),
                    v,
                ));
            }
        }
        let mut ended = false;
        for (m, &f) in self.continue_flags.iter().enumerate() {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::shape("continuation flag range", "[0, 1]", f));
            }
            if ended && f >= 0.5 {
                return Err(Error::shape(
                    format!("continuation flags at frame {m}"),
                    "non-increasing after end",
                    f,
                ));
            }
            if f < 0.5 {
                ended = true;
            }
        }
        Ok(())
    }
}

/// One corpus sample: a gloss sequence and its three aligned streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub gloss_text: String,
    pub gloss: GlossSequence,
    pub pose: ModalitySequence,
    pub hamer: ModalitySequence,
    pub smplerx: ModalitySequence,
}

impl SampleRecord {
    pub fn frame_count(&self) -> usize {
        self.pose.len()
    }

    pub fn stream(&self, modality: Modality) -> &ModalitySequence {
        match modality {
            Modality::Pose => &self.pose,
            Modality::Hamer => &self.hamer,
            Modality::Smplerx => &self.smplerx,
        }
    }

    /// The three streams of one sample must agree on frame count.
    pub fn validate_alignment(&self) -> Result<()> {
        let m = self.pose.len();
        for seq in [&self.hamer, &self.smplerx] {
            if seq.len() != m {
                return Err(Error::shape(
                    format!("frame alignment of {} in sample {}", seq.modality.tag(), self.id),
                    m,
                    seq.len(),
                ));
            }
        }
        if m == 0 {
            return Err(Error::shape(format!("sample {} length", self.id), ">= 1 frame", 0));
        }
        Ok(())
    }
}
