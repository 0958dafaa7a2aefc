//! Run configuration: a flat `key = value` text format with `#` comments.
//!
//! Every run artifact (training log, checkpoint, metrics report) records
//! `config_hash`, a digest of the canonical key/value listing, so results can
//! be traced back to the exact configuration that produced them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Weight of the continuation-channel term inside the co-generation loss.
pub const CONTINUATION_LOSS_WEIGHT: f64 = 0.1;

/// Hyperparameters and run switches shared by training, generation, and
/// evaluation.  Model width is shared by the encoder, the three decoders, the
/// correction blocks, and the recognizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Model width; must be divisible by `n_heads`.
    pub d: usize,
    pub n_heads: usize,
    /// Block count used by the encoder and each decoder.
    pub n_blocks: usize,
    pub d_ff: usize,
    /// Depth of each cross-modal correction stack.
    pub occ_blocks: usize,
    /// Attention heads inside the correction stacks.
    pub occ_heads: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Hard cap on generated frame count.
    pub m_max: usize,
    /// Hard cap on gloss-token sequence length (recognizer decoding included).
    pub n_max: usize,
    pub noise_pose: f64,
    pub noise_hamer: f64,
    pub noise_smplerx: f64,
    /// Joint co-generation loss across the three decoders (off = independent
    /// round-robin per-decoder objectives).
    pub cogen: bool,
    /// Collaborative correction stage and its weighted loss.
    pub occ: bool,
    /// Train correction in a second phase with the decoders frozen.
    pub two_phase: bool,
    pub checkpoint_every: usize,
    pub recognizer_steps: usize,
    /// Stddev of input jitter applied to ground-truth frames while training
    /// the recognizer (augmentation only; never model outputs).
    pub recognizer_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 32,
            n_heads: 4,
            n_blocks: 2,
            d_ff: 128,
            occ_blocks: 2,
            occ_heads: 4,
            lr: 1e-3,
            steps: 2000,
            batch: 8,
            seed: 1,
            m_max: 64,
            n_max: 16,
            noise_pose: 0.0,
            noise_hamer: 0.0,
            noise_smplerx: 0.0,
            cogen: true,
            occ: true,
            two_phase: false,
            checkpoint_every: 500,
            recognizer_steps: 1200,
            recognizer_noise: 0.02,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d ({}) must be a positive multiple of n_heads ({})",
                self.d, self.n_heads
            )));
        }
        if self.n_blocks == 0 {
            return Err(Error::InvalidConfig("n_blocks must be >= 1".into()));
        }
        if self.occ_blocks == 0 {
            return Err(Error::InvalidConfig("occ_blocks must be >= 1".into()));
        }
        if self.occ_heads == 0 || self.d % self.occ_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d ({}) must be a positive multiple of occ_heads ({})",
                self.d, self.occ_heads
            )));
        }
        if self.d_ff == 0 {
            return Err(Error::InvalidConfig("d_ff must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be >= 1".into()));
        }
        if self.m_max == 0 || self.n_max == 0 {
            return Err(Error::InvalidConfig("m_max and n_max must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        for (k, v) in [
            ("noise_pose", self.noise_pose),
            ("noise_hamer", self.noise_hamer),
            ("noise_smplerx", self.noise_smplerx),
            ("recognizer_noise", self.recognizer_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{k} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Parse the flat text format.  Unknown keys are rejected so typos fail
    /// loudly instead of silently running defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`, got {:?}", lineno + 1, raw))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Set one field by its config-file key; used by file parsing and by
    /// command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("bad value {value:?} for key {key:?}"))
        }
        match key {
            "d" => self.d = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "n_blocks" => self.n_blocks = num(key, value)?,
            "d_ff" => self.d_ff = num(key, value)?,
            "occ_blocks" => self.occ_blocks = num(key, value)?,
            "occ_heads" => self.occ_heads = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "m_max" => self.m_max = num(key, value)?,
            "n_max" => self.n_max = num(key, value)?,
            "noise_pose" => self.noise_pose = num(key, value)?,
            "noise_hamer" => self.noise_hamer = num(key, value)?,
            "noise_smplerx" => self.noise_smplerx = num(key, value)?,
            "cogen" => self.cogen = num(key, value)?,
            "occ" => self.occ = num(key, value)?,
            "two_phase" => self.two_phase = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "recognizer_steps" => self.recognizer_steps = num(key, value)?,
            "recognizer_noise" => self.recognizer_noise = num(key, value)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Canonical listing: sorted `key = value` lines, one per key.
    pub fn canonical(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("d", self.d.to_string());
        map.insert("n_heads", self.n_heads.to_string());
        map.insert("n_blocks", self.n_blocks.to_string());
        map.insert("d_ff", self.d_ff.to_string());
        map.insert("occ_blocks", self.occ_blocks.to_string());
        map.insert("occ_heads", self.occ_heads.to_string());
        map.insert("lr", self.lr.to_string());
        map.insert("steps", self.steps.to_string());
        map.insert("batch", self.batch.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("m_max", self.m_max.to_string());
        map.insert("n_max", self.n_max.to_string());
        map.insert("noise_pose", self.noise_pose.to_string());
        map.insert("noise_hamer", self.noise_hamer.to_string());
        map.insert("noise_smplerx", self.noise_smplerx.to_string());
        map.insert("cogen", self.cogen.to_string());
        map.insert("occ", self.occ.to_string());
        map.insert("two_phase", self.two_phase.to_string());
        map.insert("checkpoint_every", self.checkpoint_every.to_string());
        map.insert("recognizer_steps", self.recognizer_steps.to_string());
        map.insert("recognizer_noise", self.recognizer_noise.to_string());
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Hex digest (16 chars) of the canonical listing.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_text_with_comments() {
        let cfg = RunConfig::parse(
            "# toy run\n d = 16 \n n_heads=2\nlr = 0.005 # fast\n\nocc = false\n",
        )
        .unwrap();
        assert_eq!(cfg.d, 16);
        assert_eq!(cfg.n_heads, 2);
        assert_eq!(cfg.lr, 0.005);
        assert!(!cfg.occ);
        // untouched keys keep defaults
        assert_eq!(cfg.steps, RunConfig::default().steps);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_shapes() {
        assert!(RunConfig::parse("banana = 3\n").is_err());
        assert!(RunConfig::parse("d = 30\nn_heads = 4\n").is_err());
        assert!(RunConfig::parse("lr = -1\n").is_err());
        assert!(RunConfig::parse("batch = 0\n").is_err());
    }

    #[test]
    fn hash_tracks_content_not_formatting() {
        let a = RunConfig::parse("d = 16\nn_heads = 2\n").unwrap();
        let b = RunConfig::parse("# comment\nn_heads = 2\n\nd=16\n").unwrap();
        let c = RunConfig::parse("d = 16\nn_heads = 4\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
