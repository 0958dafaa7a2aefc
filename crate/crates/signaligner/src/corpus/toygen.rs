//! Synthetic corpus generator.
//!
//! Each vocabulary token maps deterministically to a motion primitive: a
//! seeded parametric sinusoid segment of 4-10 frames in an 8-channel latent
//! space.  A sample's latent trajectory is the concatenation of its tokens'
//! primitives; the three modality streams are fixed projections of that shared
//! trajectory plus optional per-modality noise.  Identical
//! `(num_samples, seed, config)` yields bitwise-identical output.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    GlossSequence, Modality, ModalitySequence, SampleRecord, Vocabulary, HAMER_DIM, KEYPOINTS,
    POSE_DIM, ROTATION_BOUND, SMPLERX_DIM,
};
use crate::error::{Error, Result};
use crate::rng::{normal, rng_for};

/// Keypoint index layout used by the generator's base skeleton and by the
/// default rendering topology.
pub mod layout {
    use std::ops::Range;

    pub const BODY: Range<usize> = 0..12;
    pub const FACE: Range<usize> = 12..28;
    pub const LEFT_HAND: Range<usize> = 28..44;
    pub const RIGHT_HAND: Range<usize> = 44..60;

    // Named body indices.
    pub const HEAD: usize = 0;
    pub const NECK: usize = 1;
    pub const L_SHOULDER: usize = 2;
    pub const R_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const R_ELBOW: usize = 5;
    pub const L_WRIST: usize = 6;
    pub const R_WRIST: usize = 7;
    pub const L_HIP: usize = 8;
    pub const R_HIP: usize = 9;
    pub const SPINE: usize = 10;
    pub const PELVIS: usize = 11;
}

/// Settings for the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub tokens_min: usize,
    pub tokens_max: usize,
    pub frames_per_token_min: usize,
    pub frames_per_token_max: usize,
    pub latent_dim: usize,
    /// Gaussian noise stddev added to the time-varying channels per modality.
    pub noise_pose: f64,
    pub noise_hamer: f64,
    pub noise_smplerx: f64,
    /// Prefix for generated sample ids (`<prefix><index:05>`).
    pub id_prefix: String,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            vocab_size: 20,
            tokens_min: 2,
            tokens_max: 6,
            frames_per_token_min: 4,
            frames_per_token_max: 10,
            latent_dim: 5,
            noise_pose: 0.0,
            noise_hamer: 0.0,
            noise_smplerx: 0.0,
            id_prefix: "sample_".to_string(),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("toy vocab_size must be >= 1".into()));
        }
        if self.tokens_min == 0 || self.tokens_min > self.tokens_max {
            return Err(Error::InvalidConfig(format!(
                "token count range [{}, {}] is invalid",
                self.tokens_min, self.tokens_max
            )));
        }
        if self.frames_per_token_min == 0 || self.frames_per_token_min > self.frames_per_token_max {
            return Err(Error::InvalidConfig(format!(
                "frames-per-token range [{}, {}] is invalid",
                self.frames_per_token_min, self.frames_per_token_max
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be >= 1".into()));
        }
        for (k, v) in [
            ("noise_pose", self.noise_pose),
            ("noise_hamer", self.noise_hamer),
            ("noise_smplerx", self.noise_smplerx),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("toy {k} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Longest possible sample in frames.
    pub fn max_frames(&self) -> usize {
        self.tokens_max * self.frames_per_token_max
    }
}

/// Synthetic gloss tokens `G01..`, in id order.
pub fn toy_vocabulary(vocab_size: usize) -> Vec<String> {
    (1..=vocab_size).map(|i| format!("G{i:02}")).collect()
}

/// One token's motion primitive: a sinusoid per latent channel.
/// Frames of the utterance-final release taper, including the rest hold.
const RELEASE_FRAMES: usize = 4;
/// Closing frames held at exact rest.
const REST_FRAMES: usize = 2;

struct Primitive {
    len: usize,
    amp: Vec<f64>,
    omega: Vec<f64>,
    phase: Vec<f64>,
}

fn primitive_for_token(seed: u64, token_idx: usize, cfg: &ToyConfig) -> Primitive {
    let mut rng = rng_for(seed, "primitive", token_idx as u64);
    let len = rng.gen_range(cfg.frames_per_token_min..=cfg.frames_per_token_max);
    let mut amp = Vec::with_capacity(cfg.latent_dim);
    let mut omega = Vec::with_capacity(cfg.latent_dim);
    let mut phase = Vec::with_capacity(cfg.latent_dim);
    for _ in 0..cfg.latent_dim {
        let magnitude = rng.gen_range(0.30..0.80);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        amp.push(sign * magnitude);
        omega.push(rng.gen_range(0.06..0.22));
        phase.push(rng.gen_range(0.0..std::f64::consts::TAU));
    }
    Primitive {
        len,
        amp,
        omega,
        phase,
    }
}

/// Latent trajectory `[M, latent_dim]` for a token-index sequence (indices
/// into the synthetic vocabulary, not vocabulary ids).
pub fn latent_for_gloss(seed: u64, token_indices: &[usize], cfg: &ToyConfig) -> Array2<f64> {
    let primitives: Vec<Primitive> = token_indices
        .iter()
        .map(|&k| primitive_for_token(seed, k, cfg))
        .collect();
    let total: usize = primitives.iter().map(|p| p.len).sum();
    let mut z = Array2::zeros((total, cfg.latent_dim));
    let mut row = 0;
    for p in &primitives {
        for t in 0..p.len {
            for c in 0..cfg.latent_dim {
                z[[row, c]] = p.amp[c] * (p.omega[c] * t as f64 + p.phase[c]).sin();
            }
            row += 1;
        }
    }
    // Utterance-final release: motion decays and the signer holds exact rest
    // for the closing frames, the way hands drop when signing ends.  The
    // approaching end is thereby visible in the signal itself -- the stop
    // decision does not have to be inferred from the total length.
    let release = RELEASE_FRAMES.min(total.saturating_sub(1));
    for r in 0..release {
        let w = if r < REST_FRAMES {
            0.0
        } else {
            (r - REST_FRAMES + 1) as f64 / (release - REST_FRAMES + 1) as f64
        };
        for c in 0..cfg.latent_dim {
            z[[total - 1 - r, c]] *= w;
        }
    }
    z
}

/// Fixed latent-to-modality projections.  Built from a constant seed so they
/// are identical for every corpus with the same latent dimension; tests
/// recompute streams from these tables independently of the generator.
pub struct ToyProjections {
    pub latent_dim: usize,
    /// Rest position of the 60 keypoints in the unit square.
    pub pose_base: Vec<(f64, f64)>,
    /// Keypoint displacement weights, `[POSE_DIM, latent_dim]`.
    pub pose_w: Array2<f64>,
    /// Hand rotation weights, `[96, latent_dim]` (left 48 then right 48).
    pub hamer_rot_w: Array2<f64>,
    /// Body rotation weights, `[165, latent_dim]`.
    pub smplerx_rot_w: Array2<f64>,
    /// The synthetic signer's constant hand/body/face shape parameters, 10
    /// values each; identical for every sample of every corpus.
    pub left_shape: Vec<f64>,
    pub right_shape: Vec<f64>,
    pub body_shape: Vec<f64>,
    pub expression: Vec<f64>,
    /// Slack configuration the signer settles into when an utterance ends:
    /// per-channel offsets from the neutral skeleton / zero rotations.  It
    /// deliberately lies outside the span of the motion projections, so a
    /// frame sitting at this configuration is recognisably terminal rather
    /// than a momentary lull mid-sign.
    pub pose_drop: Vec<f64>,
    pub hamer_drop: Vec<f64>,
    pub smplerx_drop: Vec<f64>,
}

const PROJECTION_SEED: u64 = 0x51_6e_50_72_6f_6a; // constant, not the corpus seed

/// Rest skeleton: a standing figure viewed front-on, y growing downward.
pub fn base_skeleton() -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0); KEYPOINTS];
    pts[layout::HEAD] = (0.50, 0.14);
    pts[layout::NECK] = (0.50, 0.24);
    pts[layout::L_SHOULDER] = (0.38, 0.27);
    pts[layout::R_SHOULDER] = (0.62, 0.27);
    pts[layout::L_ELBOW] = (0.32, 0.40);
    pts[layout::R_ELBOW] = (0.68, 0.40);
    pts[layout::L_WRIST] = (0.36, 0.53);
    pts[layout::R_WRIST] = (0.64, 0.53);
    pts[layout::L_HIP] = (0.44, 0.60);
    pts[layout::R_HIP] = (0.56, 0.60);
    pts[layout::SPINE] = (0.50, 0.42);
    pts[layout::PELVIS] = (0.50, 0.60);
    // Face: ellipse of 16 points around the head.
    let (cx, cy) = pts[layout::HEAD];
    for (k, i) in layout::FACE.enumerate() {
        let a = std::f64::consts::TAU * k as f64 / 16.0;
        pts[i] = (cx + 0.045 * a.cos(), cy + 0.055 * a.sin());
    }
    // Hands: a root plus three joints per finger fanning out from each wrist.
    for (hand, wrist_idx) in [(layout::LEFT_HAND, layout::L_WRIST), (layout::RIGHT_HAND, layout::R_WRIST)] {
        let (wx, wy) = pts[wrist_idx];
        let mirror = if wrist_idx == layout::L_WRIST { -1.0 } else { 1.0 };
        for (k, i) in hand.clone().enumerate() {
            if k == 0 {
                pts[i] = (wx + mirror * 0.01, wy + 0.02);
                continue;
            }
            let finger = (k - 1) / 3; // 5 fingers
            let joint = (k - 1) % 3; // 3 joints each
            let spread = (finger as f64 - 2.0) * 0.30; // radians around straight-down
            let a = std::f64::consts::FRAC_PI_2 + mirror * spread;
            let r = 0.016 * (joint + 1) as f64 + 0.012;
            pts[i] = (wx + mirror * r * a.cos().abs(), wy + r * a.sin());
        }
    }
    pts
}

impl ToyProjections {
    pub fn build(latent_dim: usize) -> Self {
        let mut rng = rng_for(PROJECTION_SEED, "projections", latent_dim as u64);
        let scale = 1.0 / (latent_dim as f64).sqrt();
        // Keypoint displacement scale by group: hands move most, face least.
        let mut pose_w = Array2::zeros((POSE_DIM, latent_dim));
        for kp in 0..KEYPOINTS {
            let group_scale = if layout::LEFT_HAND.contains(&kp) || layout::RIGHT_HAND.contains(&kp)
            {
                0.17
            } else if layout::FACE.contains(&kp) {
                0.04
            } else {
                0.095
            };
            for coord in 0..2 {
                for c in 0..latent_dim {
                    pose_w[[kp * 2 + coord, c]] = normal(&mut rng) * scale * group_scale;
                }
            }
        }
        let mut hamer_rot_w = Array2::zeros((96, latent_dim));
        for i in 0..96 {
            for c in 0..latent_dim {
                hamer_rot_w[[i, c]] = normal(&mut rng) * scale * 0.12;
            }
        }
        let mut smplerx_rot_w = Array2::zeros((165, latent_dim));
        for i in 0..165 {
            for c in 0..latent_dim {
                smplerx_rot_w[[i, c]] = normal(&mut rng) * scale * 0.11;
            }
        }
        let mut shape_draw = || -> Vec<f64> { (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let left_shape = shape_draw();
        let right_shape = shape_draw();
        let body_shape = shape_draw();
        let expression = shape_draw();
        let mut drop_draw =
            |n: usize, sd: f64| -> Vec<f64> { (0..n).map(|_| normal(&mut rng) * sd).collect() };
        let pose_drop = drop_draw(POSE_DIM, 0.05);
        let hamer_drop = drop_draw(96, 0.06);
        let smplerx_drop = drop_draw(165, 0.06);
        ToyProjections {
            latent_dim,
            pose_base: base_skeleton(),
            pose_w,
            hamer_rot_w,
            smplerx_rot_w,
            left_shape,
            right_shape,
            body_shape,
            expression,
            pose_drop,
            hamer_drop,
            smplerx_drop,
        }
    }

    /// Project one latent frame to the 120 keypoint coordinates, clamped to
    /// the unit square.
    pub fn project_pose(&self, z: ArrayView1<f64>) -> Vec<f64> {
        let mut out = vec![0.0; POSE_DIM];
        for kp in 0..KEYPOINTS {
            let (bx, by) = self.pose_base[kp];
            for coord in 0..2 {
                let i = kp * 2 + coord;
                let mut v = if coord == 0 { bx } else { by };
                for c in 0..self.latent_dim {
                    v += self.pose_w[[i, c]] * z[c];
                }
                out[i] = v.clamp(0.0, 1.0);
            }
        }
        out
    }

    /// Project one latent frame to the 96 hand rotation channels.
    pub fn project_hamer_rot(&self, z: ArrayView1<f64>) -> Vec<f64> {
        let mut out = vec![0.0; 96];
        for i in 0..96 {
            let mut v = 0.0;
            for c in 0..self.latent_dim {
                v += self.hamer_rot_w[[i, c]] * z[c];
            }
            out[i] = v.clamp(-ROTATION_BOUND, ROTATION_BOUND);
        }
        out
    }

    /// Project one latent frame to the 165 body rotation channels.
    pub fn project_smplerx_rot(&self, z: ArrayView1<f64>) -> Vec<f64> {
        let mut out = vec![0.0; 165];
        for i in 0..165 {
            let mut v = 0.0;
            for c in 0..self.latent_dim {
                v += self.smplerx_rot_w[[i, c]] * z[c];
            }
            out[i] = v.clamp(-ROTATION_BOUND, ROTATION_BOUND);
        }
        out
    }
}

fn noisy(value: f64, sigma: f64, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f32 {
    let n = normal(rng);
    ((value + sigma * n).clamp(lo, hi)) as f32
}

/// Generate `num_samples` samples.  Gloss ids refer to the vocabulary built by
/// [`toy_vocabulary`] wrapped with reserved tokens (see [`Vocabulary`]).
pub fn generate_toy_corpus(
    num_samples: usize,
    seed: u64,
    cfg: &ToyConfig,
) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    if num_samples == 0 {
        return Err(Error::EmptyCorpus);
    }
    let vocab = Vocabulary::from_corpus_tokens(toy_vocabulary(cfg.vocab_size));
    let proj = ToyProjections::build(cfg.latent_dim);
    let tokens = toy_vocabulary(cfg.vocab_size);

    let mut samples = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let mut rng = rng_for(seed, "sample", i as u64);
        let n_tokens = rng.gen_range(cfg.tokens_min..=cfg.tokens_max);
        let token_indices: Vec<usize> =
            (0..n_tokens).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
        let z = latent_for_gloss(seed, &token_indices, cfg);
        let m = z.nrows();

        // Shape/expression parameters are the signer's, not the sample's:
        // constant within a sample and shared across samples.
        let mut noise_rng = rng_for(seed, "noise", i as u64);

        let mut pose = Array2::zeros((m, POSE_DIM));
        let mut hamer = Array2::zeros((m, HAMER_DIM));
        let mut smplerx = Array2::zeros((m, SMPLERX_DIM));
        let rest_hold = REST_FRAMES.min(m.saturating_sub(1));
        for t in 0..m {
            let zt = z.row(t);
            // The closing frames sit in the slack end-of-utterance
            // configuration instead of the neutral mid-sign rest.
            let drop = |d: &[f64], j: usize| if t + rest_hold >= m { d[j] } else { 0.0 };
            for (j, v) in proj.project_pose(zt).into_iter().enumerate() {
                let v = (v + drop(&proj.pose_drop, j)).clamp(0.0, 1.0);
                pose[[t, j]] = noisy(v, cfg.noise_pose, &mut noise_rng, 0.0, 1.0);
            }
            let rot = proj.project_hamer_rot(zt);
            for (h, half) in [(0usize, 0usize), (1, 58)] {
                for j in 0..48 {
                    hamer[[t, half + j]] = noisy(
                        rot[h * 48 + j] + drop(&proj.hamer_drop, h * 48 + j),
                        cfg.noise_hamer,
                        &mut noise_rng,
                        -ROTATION_BOUND,
                        ROTATION_BOUND,
                    );
                }
            }
            for j in 0..10 {
                hamer[[t, 48 + j]] = proj.left_shape[j] as f32;
                hamer[[t, 58 + 48 + j]] = proj.right_shape[j] as f32;
            }
            let rot = proj.project_smplerx_rot(zt);
            for (j, &v) in rot.iter().enumerate() {
                smplerx[[t, j]] = noisy(
                    v + drop(&proj.smplerx_drop, j),
                    cfg.noise_smplerx,
                    &mut noise_rng,
                    -ROTATION_BOUND,
                    ROTATION_BOUND,
                );
            }
            for j in 0..10 {
                smplerx[[t, 165 + j]] = proj.body_shape[j] as f32;
                smplerx[[t, 175 + j]] = proj.expression[j] as f32;
            }
        }

        let gloss_ids: Vec<usize> = token_indices
            .iter()
            .map(|&k| vocab.id(&tokens[k]).expect("toy token in vocabulary"))
            .collect();
        let gloss_text = token_indices
            .iter()
            .map(|&k| tokens[k].clone())
            .collect::<Vec<_>>()
            .join(" ");

        let sample = SampleRecord {
            id: format!("{}{i:05}", cfg.id_prefix),
            gloss_text,
            gloss: GlossSequence::new(gloss_ids)?,
            pose: ModalitySequence::with_end_marker(Modality::Pose, pose)?,
            hamer: ModalitySequence::with_end_marker(Modality::Hamer, hamer)?,
            smplerx: ModalitySequence::with_end_marker(Modality::Smplerx, smplerx)?,
        };
        sample.validate_alignment()?;
        debug_assert!(sample.pose.validate_strict().is_ok());
        samples.push(sample);
    }
    Ok(samples)
}
