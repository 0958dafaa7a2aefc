//! Back-translation recognizer: a small sequence-to-sequence model mapping
//! the three modality streams back to gloss tokens, used to score generated
//! signs with text metrics.
//!
//! Frames from the three streams are projected into the shared width by
//! per-stream adapters and summed (equivalent to one projection of the
//! concatenated 421-wide frame), run through self-attention blocks, and an
//! autoregressive token decoder with cross-attention produces gloss tokens.
//! Greedy decoding runs until the end token or the token cap.  The
//! recognizer is trained only on ground-truth sequences, never on model
//! outputs, so its scores do not leak generator behavior.

use ndarray::Array2;

use crate::config::RunConfig;
use crate::corpus::{Modality, BOS_ID, EOS_ID};
use crate::encoder::{
    bind_encoder_blocks, bind_ffn, bind_layer_norm, bind_mha, encoder_blocks_forward, ffn,
    init_encoder_blocks, init_ffn, init_layer_norm, init_mha, layer_norm, linear, mha, pe_matrix,
    EncoderBlockNodes, FfnNodes, LnNodes, MhaNodes,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{bind_all, Bound, Init, ParamStore};
use crate::scalar::Scalar;

/// Which input streams the recognizer may see; masked streams are replaced
/// by zero frames, enabling per-stream evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMask {
    pub pose: bool,
    pub hamer: bool,
    pub smplerx: bool,
}

impl Default for StreamMask {
    fn default() -> Self {
        StreamMask {
            pose: true,
            hamer: true,
            smplerx: true,
        }
    }
}

impl StreamMask {
    pub fn allows(&self, modality: Modality) -> bool {
        match modality {
            Modality::Pose => self.pose,
            Modality::Hamer => self.hamer,
            Modality::Smplerx => self.smplerx,
        }
    }
}

pub struct RecognizerDecBlockNodes {
    pub self_attn: MhaNodes,
    pub n1: LnNodes,
    pub cross: MhaNodes,
    pub n2: LnNodes,
    pub ffn: FfnNodes,
    pub n3: LnNodes,
}

pub struct RecognizerNodes {
    /// Per-stream frame adapters, canonical order (pose, hamer, smplerx).
    pub in_w: [NodeId; 3],
    pub in_b: NodeId,
    pub enc_blocks: Vec<EncoderBlockNodes>,
    pub tok_embed: NodeId,
    pub dec_blocks: Vec<RecognizerDecBlockNodes>,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

pub fn init_recognizer<T: Scalar>(
    init: &Init,
    store: &mut ParamStore<T>,
    cfg: &RunConfig,
    vocab_size: usize,
) {
    for modality in [Modality::Pose, Modality::Hamer, Modality::Smplerx] {
        init.xavier(store, &format!("rec.in.{}.w", modality.tag()), modality.dim(), cfg.d);
    }
    init.zeros(store, "rec.in.b", 1, cfg.d);
    init_encoder_blocks(init, store, "rec.enc", cfg);
    init.xavier(store, "rec.tok.embed.w", vocab_size, cfg.d);
    for i in 0..cfg.n_blocks {
        init_mha(init, store, &format!("rec.dec.b{i}.self"), cfg.d);
        init_layer_norm(init, store, &format!("rec.dec.b{i}.n1"), cfg.d);
        init_mha(init, store, &format!("rec.dec.b{i}.cross"), cfg.d);
        init_layer_norm(init, store, &format!("rec.dec.b{i}.n2"), cfg.d);
        init_ffn(init, store, &format!("rec.dec.b{i}.ffn"), cfg.d, cfg.d_ff);
        init_layer_norm(init, store, &format!("rec.dec.b{i}.n3"), cfg.d);
    }
    init.xavier(store, "rec.head.w", cfg.d, vocab_size);
    init.zeros(store, "rec.head.b", 1, vocab_size);
}

pub fn bind_recognizer(bound: &Bound, cfg: &RunConfig) -> RecognizerNodes {
    RecognizerNodes {
        in_w: [
            bound.id("rec.in.pose.w"),
            bound.id("rec.in.hamer.w"),
            bound.id("rec.in.smplerx.w"),
        ],
        in_b: bound.id("rec.in.b"),
        enc_blocks: bind_encoder_blocks(bound, "rec.enc", cfg),
        tok_embed: bound.id("rec.tok.embed.w"),
        dec_blocks: (0..cfg.n_blocks)
            .map(|i| RecognizerDecBlockNodes {
                self_attn: bind_mha(bound, &format!("rec.dec.b{i}.self")),
                n1: bind_layer_norm(bound, &format!("rec.dec.b{i}.n1")),
                cross: bind_mha(bound, &format!("rec.dec.b{i}.cross")),
                n2: bind_layer_norm(bound, &format!("rec.dec.b{i}.n2")),
                ffn: bind_ffn(bound, &format!("rec.dec.b{i}.ffn")),
                n3: bind_layer_norm(bound, &format!("rec.dec.b{i}.n3")),
            })
            .collect(),
        head_w: bound.id("rec.head.w"),
        head_b: bound.id("rec.head.b"),
    }
}

/// Frame triple for recognizer input.
pub struct FrameTriple<'a, T: Scalar> {
    pub pose: &'a Array2<T>,
    pub hamer: &'a Array2<T>,
    pub smplerx: &'a Array2<T>,
}

impl<'a, T: Scalar> FrameTriple<'a, T> {
    fn get(&self, modality: Modality) -> &'a Array2<T> {
        match modality {
            Modality::Pose => self.pose,
            Modality::Hamer => self.hamer,
            Modality::Smplerx => self.smplerx,
        }
    }

    fn validate(&self) -> Result<usize> {
        let m = self.pose.nrows();
        for modality in [Modality::Pose, Modality::Hamer, Modality::Smplerx] {
            let f = self.get(modality);
            if f.nrows() != m {
                return Err(Error::shape("recognizer input frame count", m, f.nrows()));
            }
            if f.ncols() != modality.dim() {
                return Err(Error::shape(
                    format!("recognizer {} width", modality.tag()),
                    modality.dim(),
                    f.ncols(),
                ));
            }
        }
        if m == 0 {
            return Err(Error::shape("recognizer input frame count", "> 0", 0usize));
        }
        Ok(m)
    }
}

/// Encode the frame triple into memory rows (graph side).  Masked streams
/// contribute nothing (their adapter input is zero).
pub fn recognizer_memory_node<T: Scalar>(
    g: &mut Graph<T>,
    rec: &RecognizerNodes,
    frames: &FrameTriple<'_, T>,
    cfg: &RunConfig,
    mask: StreamMask,
) -> Result<NodeId> {
    let m = frames.validate()?;
    let mut summed: Option<NodeId> = None;
    for (k, modality) in [Modality::Pose, Modality::Hamer, Modality::Smplerx]
        .into_iter()
        .enumerate()
    {
        if !mask.allows(modality) {
            continue;
        }
        let mut stream = frames.get(modality).clone();
        let c = crate::scalar::s::<T>(crate::cogen::input_center(modality));
        if c != T::zero() {
            stream.mapv_inplace(|v| v - c);
        }
        let leaf = g.leaf(stream);
        let proj = g.matmul(leaf, rec.in_w[k]);
        summed = Some(match summed {
            Some(acc) => g.add(acc, proj),
            None => proj,
        });
    }
    // All streams masked: the summed projection is identically zero.
    let base = match summed {
        Some(s) => s,
        None => g.leaf(Array2::zeros((m, cfg.d))),
    };
    let biased = g.add_row(base, rec.in_b);
    let pe = g.leaf(pe_matrix::<T>(m, cfg.d)?);
    let x = g.add(biased, pe);
    encoder_blocks_forward(g, &rec.enc_blocks, x, cfg.n_heads, None)
}

/// Token-decoder logits for a teacher-forcing input id sequence (graph side).
/// Row t scores the token following `input_ids[..=t]`.
pub fn recognizer_logits_node<T: Scalar>(
    g: &mut Graph<T>,
    rec: &RecognizerNodes,
    memory: NodeId,
    input_ids: &[usize],
    cfg: &RunConfig,
) -> Result<NodeId> {
    if input_ids.is_empty() {
        return Err(Error::shape("token decoder input length", "> 0", 0usize));
    }
    let vocab_rows = g.shape(rec.tok_embed).0;
    for &id in input_ids {
        if id >= vocab_rows {
            return Err(Error::shape("token id", format!("< {vocab_rows}"), id));
        }
    }
    let emb = g.gather_rows(rec.tok_embed, input_ids);
    let pe = g.leaf(pe_matrix::<T>(input_ids.len(), cfg.d)?);
    let mut h = g.add(emb, pe);
    let rows = input_ids.len();
    let causal = Array2::from_shape_fn((rows, rows), |(i, j)| j <= i);
    for block in &rec.dec_blocks {
        let sa = mha(g, &block.self_attn, h, h, cfg.n_heads, Some(&causal));
        let r1 = g.add(h, sa);
        let x1 = layer_norm(g, r1, &block.n1);
        let ca = mha(g, &block.cross, x1, memory, cfg.n_heads, None);
        let r2 = g.add(x1, ca);
        let x2 = layer_norm(g, r2, &block.n2);
        let ff = ffn(g, x2, &block.ffn);
        let r3 = g.add(x2, ff);
        h = layer_norm(g, r3, &block.n3);
    }
    Ok(linear(g, h, rec.head_w, rec.head_b))
}

/// Teacher-forced token cross-entropy for one sample (graph side): input is
/// BOS followed by the gloss ids, targets are the gloss ids followed by EOS.
pub fn recognizer_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    rec: &RecognizerNodes,
    frames: &FrameTriple<'_, T>,
    gloss_ids: &[usize],
    cfg: &RunConfig,
) -> Result<NodeId> {
    if gloss_ids.is_empty() {
        return Err(Error::shape("gloss id count", "> 0", 0usize));
    }
    let memory = recognizer_memory_node(g, rec, frames, cfg, StreamMask::default())?;
    let mut input = Vec::with_capacity(gloss_ids.len() + 1);
    input.push(BOS_ID);
    input.extend_from_slice(gloss_ids);
    let mut targets = gloss_ids.to_vec();
    targets.push(EOS_ID);
    let logits = recognizer_logits_node(g, rec, memory, &input, cfg)?;
    Ok(g.ce_mean(logits, &targets))
}

/// Greedy decode: argmax token per step until EOS or the token cap; returns
/// ids with BOS/EOS stripped.
pub fn backtranslate_masked<T: Scalar>(
    frames: &FrameTriple<'_, T>,
    store: &ParamStore<T>,
    cfg: &RunConfig,
    mask: StreamMask,
) -> Result<Vec<usize>> {
    frames.validate()?;
    let mut out: Vec<usize> = Vec::new();
    loop {
        let mut g = Graph::new();
        let bound = bind_all(&mut g, store);
        let rec = bind_recognizer(&bound, cfg);
        let memory = recognizer_memory_node(&mut g, &rec, frames, cfg, mask)?;
        let mut input = Vec::with_capacity(out.len() + 1);
        input.push(BOS_ID);
        input.extend_from_slice(&out);
        let logits = recognizer_logits_node(&mut g, &rec, memory, &input, cfg)?;
        let values = g.value(logits);
        let last = values.nrows() - 1;
        let mut best = 0usize;
        let mut best_v = values[[last, 0]];
        for (j, &v) in values.row(last).iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        if best == EOS_ID || out.len() >= cfg.n_max {
            break;
        }
        out.push(best);
        if out.len() >= cfg.n_max {
            break;
        }
    }
    Ok(out)
}

/// Greedy decode over all three streams.
pub fn backtranslate<T: Scalar>(
    frames: &FrameTriple<'_, T>,
    store: &ParamStore<T>,
    cfg: &RunConfig,
) -> Result<Vec<usize>> {
    backtranslate_masked(frames, store, cfg, StreamMask::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            d: 8,
            n_heads: 2,
            n_blocks: 1,
            d_ff: 16,
            n_max: 6,
            ..RunConfig::default()
        }
    }

    fn rec_store(cfg: &RunConfig, vocab: usize, seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        init_recognizer(&Init::new(seed), &mut store, cfg, vocab);
        store
    }

    fn demo_frames(m: usize, salt: u64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let make = |modality: Modality, shift: f64| {
            Array2::from_shape_fn((m, modality.dim()), |(r, c)| {
                (((r * 17 + c) as f64 + salt as f64 + shift) * 0.097).sin() * 0.3 + 0.5
            })
        };
        (
            make(Modality::Pose, 0.0),
            make(Modality::Hamer, 10.0),
            make(Modality::Smplerx, 20.0),
        )
    }

    #[test]
    fn decode_is_deterministic_and_terminates() {
        let cfg = tiny_cfg();
        let store = rec_store(&cfg, 9, 3);
        let (p, h, s) = demo_frames(4, 1);
        let triple = FrameTriple {
            pose: &p,
            hamer: &h,
            smplerx: &s,
        };
        let a = backtranslate(&triple, &store, &cfg).unwrap();
        let b = backtranslate(&triple, &store, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= cfg.n_max);
        assert!(!a.contains(&EOS_ID), "EOS is stripped");
    }

    #[test]
    fn all_zero_input_still_terminates() {
        let cfg = tiny_cfg();
        let store = rec_store(&cfg, 9, 4);
        let p = Array2::zeros((3, Modality::Pose.dim()));
        let h = Array2::zeros((3, Modality::Hamer.dim()));
        let s = Array2::zeros((3, Modality::Smplerx.dim()));
        let triple = FrameTriple {
            pose: &p,
            hamer: &h,
            smplerx: &s,
        };
        let out = backtranslate(&triple, &store, &cfg).unwrap();
        assert!(out.len() <= cfg.n_max);
    }

    #[test]
    fn masked_stream_values_do_not_affect_logits() {
        let cfg = tiny_cfg();
        let store = rec_store(&cfg, 9, 5);
        let (p, h, s) = demo_frames(3, 2);
        let mask = StreamMask {
            pose: false,
            hamer: true,
            smplerx: true,
        };
        let run = |pose: &Array2<f64>| -> Vec<usize> {
            let triple = FrameTriple {
                pose,
                hamer: &h,
                smplerx: &s,
            };
            backtranslate_masked(&triple, &store, &cfg, mask).unwrap()
        };
        let a = run(&p);
        let wild = p.mapv(|x| x * 100.0 - 17.0);
        let b = run(&wild);
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_frame_counts_are_rejected() {
        let cfg = tiny_cfg();
        let store = rec_store(&cfg, 9, 6);
        let (p, h, _) = demo_frames(3, 3);
        let s = Array2::zeros((4, Modality::Smplerx.dim()));
        let triple = FrameTriple {
            pose: &p,
            hamer: &h,
            smplerx: &s,
        };
        assert!(backtranslate(&triple, &store, &cfg).is_err());
    }

    #[test]
    fn token_causality_holds_bitwise() {
        let cfg = tiny_cfg();
        let store = rec_store(&cfg, 9, 7);
        let (p, h, s) = demo_frames(3, 4);
        let logits_for = |ids: &[usize]| -> Array2<f64> {
            let mut g = Graph::new();
            let bound = bind_all(&mut g, &store);
            let rec = bind_recognizer(&bound, &cfg);
            let triple = FrameTriple {
                pose: &p,
                hamer: &h,
                smplerx: &s,
            };
            let memory = recognizer_memory_node(&mut g, &rec, &triple, &cfg, StreamMask::default())
                .unwrap();
            let node = recognizer_logits_node(&mut g, &rec, memory, ids, &cfg).unwrap();
            g.value(node).clone()
        };
        let a = logits_for(&[BOS_ID, 3, 4, 5]);
        let b = logits_for(&[BOS_ID, 3, 7, 8]);
        // Rows 0..=1 see only the shared prefix [BOS, 3].
        for r in 0..=1 {
            for c in 0..9 {
                assert_eq!(a[[r, c]].to_bits(), b[[r, c]].to_bits(), "row {r} col {c}");
            }
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let store = rec_store(&cfg, 7, 8);
        let (p, h, s) = demo_frames(3, 5);
        let gloss = [3usize, 5, 4];

        let forward = |st: &ParamStore<f64>| -> f64 {
            let mut g = Graph::new();
            let bound = bind_all(&mut g, st);
            let rec = bind_recognizer(&bound, &cfg);
            let triple = FrameTriple {
                pose: &p,
                hamer: &h,
                smplerx: &s,
            };
            let loss = recognizer_loss_node(&mut g, &rec, &triple, &gloss, &cfg).unwrap();
            g.value(loss)[[0, 0]]
        };

        let mut g = Graph::new();
        let bound = bind_all(&mut g, &store);
        let rec = bind_recognizer(&bound, &cfg);
        let triple = FrameTriple {
            pose: &p,
            hamer: &h,
            smplerx: &s,
        };
        let loss = recognizer_loss_node(&mut g, &rec, &triple, &gloss, &cfg).unwrap();
        let grads = g.backward(loss);

        let hstep = 1e-4;
        let mut checked = 0usize;
        let mut failed = 0usize;
        for name in store.names() {
            let base = store.get(name).unwrap().clone();
            let analytic = grads.get_or_zeros(bound.id(name), base.dim());
            for (r, c) in [(0usize, 0usize), (0, 1), (1, 1)] {
                if r >= base.nrows() || c >= base.ncols() {
                    continue;
                }
                let mut plus = store.clone();
                plus.get_mut(name).unwrap()[[r, c]] += hstep;
                let mut minus = store.clone();
                minus.get_mut(name).unwrap()[[r, c]] -= hstep;
                let numeric = (forward(&plus) - forward(&minus)) / (2.0 * hstep);
                let a = analytic[[r, c]];
                let denom = a.abs().max(numeric.abs()).max(1e-4);
                checked += 1;
                if (a - numeric).abs() / denom >= 1e-3 {
                    failed += 1;
                }
            }
        }
        assert!(checked > 50, "checked only {checked}");
        assert_eq!(failed, 0, "{failed}/{checked} recognizer gradient coords out of tolerance");
    }
}
