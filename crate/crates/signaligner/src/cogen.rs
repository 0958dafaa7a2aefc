//! Joint autoregressive generation of the three modality streams.
//!
//! One decoder per modality (pose / hamer / smplerx), each conditioned on the
//! encoded gloss text through cross-attention.  Training uses teacher forcing
//! with a shared frame-reconstruction loss: per-element mean absolute error
//! summed over the three streams and averaged over frames, plus a small
//! binary cross-entropy term on the per-frame continuation channel.  At
//! inference the three decoders free-run in lockstep and stop once all three
//! vote to stop (continuation probability below one half) or a frame cap is
//! hit, keeping the streams frame-aligned for the correction stage.

use ndarray::{Array1, Array2};

use crate::config::{RunConfig, CONTINUATION_LOSS_WEIGHT};
use crate::corpus::{Modality, SampleRecord};
use crate::encoder::{
    bind_ffn, bind_layer_norm, bind_mha, encode_gloss, ffn, init_ffn, init_layer_norm, init_mha,
    layer_norm, linear, mha, pe_matrix, FfnNodes, LnNodes, MhaNodes,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{bind_all, Bound, Init, ParamStore};
use crate::scalar::{s, Scalar};

/// All three modalities in canonical order (pose, hamer, smplerx).
pub const MODALITIES: [Modality; 3] = [Modality::Pose, Modality::Hamer, Modality::Smplerx];

/// One generated stream: predicted frames plus the per-frame probability that
/// another frame follows.
#[derive(Debug, Clone)]
pub struct GeneratedSequence<T: Scalar> {
    pub frames: Array2<T>,
    pub continue_probs: Vec<T>,
}

/// The three co-generated streams, frame-aligned.
#[derive(Debug, Clone)]
pub struct CoGenOutput<T: Scalar> {
    pub pose: GeneratedSequence<T>,
    pub hamer: GeneratedSequence<T>,
    pub smplerx: GeneratedSequence<T>,
}

impl<T: Scalar> CoGenOutput<T> {
    pub fn stream(&self, modality: Modality) -> &GeneratedSequence<T> {
        match modality {
            Modality::Pose => &self.pose,
            Modality::Hamer => &self.hamer,
            Modality::Smplerx => &self.smplerx,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.pose.frames.nrows()
    }

    /// Equal frame counts across the three streams.
    pub fn validate_alignment(&self) -> Result<()> {
        let m = self.frame_count();
        for modality in MODALITIES {
            let s = self.stream(modality);
            if s.frames.nrows() != m || s.continue_probs.len() != m {
                return Err(Error::shape(
                    format!("{} generated frame count", modality.tag()),
                    m,
                    s.frames.nrows(),
                ));
            }
        }
        Ok(())
    }
}

/// Clamp generated frames into the physical range of each channel, for
/// feedback stability and for writing valid output files.
pub fn clamp_to_bounds<T: Scalar>(frames: &mut Array2<T>, modality: Modality) {
    for ((_, j), v) in frames.indexed_iter_mut() {
        let (lo, hi) = modality.channel_bounds(j);
        let (lo, hi) = (s::<T>(lo), s::<T>(hi));
        if *v < lo {
            *v = lo;
        }
        if *v > hi {
            *v = hi;
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

pub struct DecoderBlockNodes {
    pub self_attn: MhaNodes,
    pub n1: LnNodes,
    pub cross: MhaNodes,
    pub n2: LnNodes,
    pub ffn: FfnNodes,
    pub n3: LnNodes,
}

pub struct DecoderNodes {
    pub in_w: NodeId,
    pub in_b: NodeId,
    pub bos: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
    pub blocks: Vec<DecoderBlockNodes>,
}

fn prefix(modality: Modality) -> String {
    format!("dec.{}", modality.tag())
}

/// Register one modality decoder's parameters.
pub fn init_decoder<T: Scalar>(
    init: &Init,
    store: &mut ParamStore<T>,
    modality: Modality,
    cfg: &RunConfig,
) {
    let p = prefix(modality);
    let dm = modality.dim();
    init.xavier(store, &format!("{p}.in.w"), dm, cfg.d);
    init.zeros(store, &format!("{p}.in.b"), 1, cfg.d);
    init.xavier(store, &format!("{p}.bos"), 1, cfg.d);
    for i in 0..cfg.n_blocks {
        init_mha(init, store, &format!("{p}.b{i}.self"), cfg.d);
        init_layer_norm(init, store, &format!("{p}.b{i}.n1"), cfg.d);
        init_mha(init, store, &format!("{p}.b{i}.cross"), cfg.d);
        init_layer_norm(init, store, &format!("{p}.b{i}.n2"), cfg.d);
        init_ffn(init, store, &format!("{p}.b{i}.ffn"), cfg.d, cfg.d_ff);
        init_layer_norm(init, store, &format!("{p}.b{i}.n3"), cfg.d);
    }
    init.xavier(store, &format!("{p}.head.w"), cfg.d, dm + 1);
    init.zeros(store, &format!("{p}.head.b"), 1, dm + 1);
    // Start the continuation logit positive: almost every frame continues, so
    // the head should begin near the majority class rather than spend early
    // steps discovering it.
    if let Ok(b) = store.get_mut(&format!("{p}.head.b")) {
        b[[0, dm]] = s::<T>(2.0);
    }
}

pub fn init_all_decoders<T: Scalar>(init: &Init, store: &mut ParamStore<T>, cfg: &RunConfig) {
    for modality in MODALITIES {
        init_decoder(init, store, modality, cfg);
    }
}

pub fn bind_decoder(bound: &Bound, modality: Modality, cfg: &RunConfig) -> DecoderNodes {
    let p = prefix(modality);
    DecoderNodes {
        in_w: bound.id(&format!("{p}.in.w")),
        in_b: bound.id(&format!("{p}.in.b")),
        bos: bound.id(&format!("{p}.bos")),
        head_w: bound.id(&format!("{p}.head.w")),
        head_b: bound.id(&format!("{p}.head.b")),
        blocks: (0..cfg.n_blocks)
            .map(|i| DecoderBlockNodes {
                self_attn: bind_mha(bound, &format!("{p}.b{i}.self")),
                n1: bind_layer_norm(bound, &format!("{p}.b{i}.n1")),
                cross: bind_mha(bound, &format!("{p}.b{i}.cross")),
                n2: bind_layer_norm(bound, &format!("{p}.b{i}.n2")),
                ffn: bind_ffn(bound, &format!("{p}.b{i}.ffn")),
                n3: bind_layer_norm(bound, &format!("{p}.b{i}.n3")),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Forward passes (graph side).
// ---------------------------------------------------------------------------

/// Lower-triangular self-attention mask: position i may see positions <= i.
fn causal_mask(m: usize) -> Array2<bool> {
    Array2::from_shape_fn((m, m), |(i, j)| j <= i)
}

fn expand_text_mask(rows: usize, text_mask: &[bool]) -> Array2<bool> {
    Array2::from_shape_fn((rows, text_mask.len()), |(_, j)| text_mask[j])
}

/// Decoder trunk: masked self-attention, cross-attention to the text
/// features, feed-forward; post-norm residuals throughout.
fn decoder_blocks_forward<T: Scalar>(
    g: &mut Graph<T>,
    dec: &DecoderNodes,
    x: NodeId,
    text: NodeId,
    cfg: &RunConfig,
    text_mask: Option<&[bool]>,
) -> NodeId {
    let rows = g.shape(x).0;
    let self_mask = causal_mask(rows);
    let cross_mask = text_mask.map(|m| expand_text_mask(rows, m));
    let mut h = x;
    for block in &dec.blocks {
        let sa = mha(g, &block.self_attn, h, h, cfg.n_heads, Some(&self_mask));
        let r1 = g.add(h, sa);
        let x1 = layer_norm(g, r1, &block.n1);
        let ca = mha(g, &block.cross, x1, text, cfg.n_heads, cross_mask.as_ref());
        let r2 = g.add(x1, ca);
        let x2 = layer_norm(g, r2, &block.n2);
        let ff = ffn(g, x2, &block.ffn);
        let r3 = g.add(x2, ff);
        h = layer_norm(g, r3, &block.n3);
    }
    h
}

/// Teacher-forced predictions for one modality, as graph nodes.
pub struct TeacherNodes {
    /// M x D predicted frames; row m is the prediction for ground-truth frame m.
    pub frames: NodeId,
    /// M x 1 continuation logits.
    pub cont_logits: NodeId,
}

/// Build the teacher-forced decoder input rows as a node: a learned
/// begin-of-sequence row followed by the embeddings of ground-truth frames
/// 0..M-2, plus positional encodings.  Row m therefore only carries
/// information about frames strictly before m.
fn teacher_input_node<T: Scalar>(
    g: &mut Graph<T>,
    dec: &DecoderNodes,
    gt_frames: &Array2<T>,
    d: usize,
    modality: Modality,
) -> Result<NodeId> {
    let m = gt_frames.nrows();
    let base = if m > 1 {
        let mut hist_m = gt_frames.slice(ndarray::s![..m - 1, ..]).to_owned();
        center_frames(&mut hist_m, modality);
        let hist = g.leaf(hist_m);
        let emb = linear(g, hist, dec.in_w, dec.in_b);
        g.concat_rows(dec.bos, emb)
    } else {
        dec.bos
    };
    let pe = g.leaf(pe_matrix::<T>(m, d)?);
    Ok(g.add(base, pe))
}

/// Teacher-forced forward for one modality (graph side).
pub fn decoder_teacher_nodes<T: Scalar>(
    g: &mut Graph<T>,
    dec: &DecoderNodes,
    modality: Modality,
    gt_frames: &Array2<T>,
    text: NodeId,
    cfg: &RunConfig,
    text_mask: Option<&[bool]>,
) -> Result<TeacherNodes> {
    let dm = modality.dim();
    if gt_frames.ncols() != dm {
        return Err(Error::shape(
            format!("{} decoder input width", modality.tag()),
            dm,
            gt_frames.ncols(),
        ));
    }
    if gt_frames.nrows() == 0 {
        return Err(Error::shape(
            format!("{} decoder frame count", modality.tag()),
            "> 0",
            0usize,
        ));
    }
    let x = teacher_input_node(g, dec, gt_frames, cfg.d, modality)?;
    let h = decoder_blocks_forward(g, dec, x, text, cfg, text_mask);
    let out = linear(g, h, dec.head_w, dec.head_b);
    Ok(TeacherNodes {
        frames: g.slice_cols(out, 0, dm),
        cont_logits: g.slice_cols(out, dm, dm + 1),
    })
}

// ---------------------------------------------------------------------------
// Loss.
// ---------------------------------------------------------------------------

/// Frame-reconstruction loss over the three teacher-forced streams, as a
/// graph node: sum over modalities of the per-element mean absolute error,
/// plus the weighted mean continuation cross-entropy.
pub fn loss_tmc_node<T: Scalar>(
    g: &mut Graph<T>,
    preds: [&TeacherNodes; 3],
    gt: &SampleRecord,
) -> Result<NodeId> {
    let m = gt.frame_count();
    let mut frame_terms: Option<NodeId> = None;
    let mut cont_terms: Option<NodeId> = None;
    for (pred, modality) in preds.iter().zip(MODALITIES) {
        let seq = gt.stream(modality);
        if g.shape(pred.frames).0 != m {
            return Err(Error::shape(
                format!("{} prediction frame count", modality.tag()),
                m,
                g.shape(pred.frames).0,
            ));
        }
        let target = g.leaf(seq.frames_as::<T>());
        let diff = g.sub(pred.frames, target);
        let mae = g.abs(diff);
        let mae = g.mean_all(mae);
        frame_terms = Some(match frame_terms {
            Some(acc) => g.add(acc, mae),
            None => mae,
        });
        let bce = g.bce_logits_mean(pred.cont_logits, seq.flags_column::<T>());
        cont_terms = Some(match cont_terms {
            Some(acc) => g.add(acc, bce),
            None => bce,
        });
    }
    let frames = frame_terms.expect("three modalities");
    let cont = cont_terms.expect("three modalities");
    let cont = g.scale(cont, CONTINUATION_LOSS_WEIGHT / 3.0);
    Ok(g.add(frames, cont))
}

/// Value-level frame-reconstruction loss between generated output and ground
/// truth (continuation term computed from probabilities).
pub fn loss_tmc<T: Scalar>(pred: &CoGenOutput<T>, gt: &SampleRecord) -> Result<T> {
    pred.validate_alignment()?;
    if pred.frame_count() != gt.frame_count() {
        return Err(Error::shape(
            "generated frame count",
            gt.frame_count(),
            pred.frame_count(),
        ));
    }
    let mut frame_sum = T::zero();
    let mut cont_sum = T::zero();
    for modality in MODALITIES {
        let p = pred.stream(modality);
        let t = gt.stream(modality);
        let target = t.frames_as::<T>();
        let diff = &p.frames - &target;
        let mae = diff.mapv(|x| x.abs()).sum() / s::<T>(diff.len() as f64);
        frame_sum += mae;
        let eps = s::<T>(1e-7);
        let one = T::one();
        let mut bce = T::zero();
        for (m, &prob) in p.continue_probs.iter().enumerate() {
            let prob = prob.max(eps).min(one - eps);
            let target = s::<T>(t.continue_flags[m] as f64);
            bce -= target * prob.ln() + (one - target) * (one - prob).ln();
        }
        cont_sum += bce / s::<T>(p.continue_probs.len() as f64);
    }
    Ok(frame_sum + s::<T>(CONTINUATION_LOSS_WEIGHT / 3.0) * cont_sum)
}

// ---------------------------------------------------------------------------
// Value-level decoding.
// ---------------------------------------------------------------------------

/// Offset subtracted from a modality's frames before any input projection.
/// Pose coordinates live in [0, 1] around the canvas midpoint, so projecting
/// them raw would bury the motion under a large constant; rotation streams
/// are already zero-mean.
pub fn input_center(modality: Modality) -> f64 {
    match modality {
        Modality::Pose => 0.5,
        _ => 0.0,
    }
}

/// Graph-side centering: subtract the modality offset from every row of a
/// frame node.  No-op for zero-mean streams.
pub fn centered_node<T: Scalar>(g: &mut Graph<T>, frames: NodeId, modality: Modality) -> NodeId {
    let c = input_center(modality);
    if c == 0.0 {
        return frames;
    }
    let w = g.shape(frames).1;
    let row = g.leaf(Array2::from_elem((1, w), s::<T>(-c)));
    g.add_row(frames, row)
}

/// Value-side centering of an owned frame matrix.
fn center_frames<T: Scalar>(frames: &mut Array2<T>, modality: Modality) {
    let c = s::<T>(input_center(modality));
    if c != T::zero() {
        frames.mapv_inplace(|v| v - c);
    }
}

/// Embed a frame sequence into model space: row i = (frames[i] - center) * W
/// + b + position i.
pub fn embed_frames<T: Scalar>(
    frames: &Array2<T>,
    store: &ParamStore<T>,
    cfg: &RunConfig,
    modality: Modality,
) -> Result<Array2<T>> {
    if frames.ncols() != modality.dim() {
        return Err(Error::shape(
            format!("{} frame width", modality.tag()),
            modality.dim(),
            frames.ncols(),
        ));
    }
    let p = prefix(modality);
    let w = store.get(&format!("{p}.in.w"))?;
    let b = store.get(&format!("{p}.in.b"))?;
    let mut centered = frames.to_owned();
    center_frames(&mut centered, modality);
    let mut out = centered.dot(w);
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let pe = crate::encoder::positional_encoding::<T>(i, cfg.d)?;
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v + b[[0, c]] + pe[c];
        }
    }
    Ok(out)
}

/// Build the decoder input rows for frames generated so far: the learned
/// begin row at position 0, then each frame's embedding at position i+1.
pub fn decoder_input_rows<T: Scalar>(
    frames_so_far: &Array2<T>,
    store: &ParamStore<T>,
    cfg: &RunConfig,
    modality: Modality,
) -> Result<Array2<T>> {
    let p = prefix(modality);
    let bos = store.get(&format!("{p}.bos"))?;
    let k = frames_so_far.nrows();
    let mut rows = Array2::zeros((k + 1, cfg.d));
    rows.row_mut(0).assign(&bos.row(0));
    if k > 0 {
        let w = store.get(&format!("{p}.in.w"))?;
        let b = store.get(&format!("{p}.in.b"))?;
        let mut centered = frames_so_far.to_owned();
        center_frames(&mut centered, modality);
        let emb = centered.dot(w);
        for i in 0..k {
            for c in 0..cfg.d {
                rows[[i + 1, c]] = emb[[i, c]] + b[[0, c]];
            }
        }
    }
    for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
        let pe = crate::encoder::positional_encoding::<T>(i, cfg.d)?;
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v + pe[c];
        }
    }
    Ok(rows)
}

/// One autoregressive step: run the decoder over the history rows and return
/// the next-frame prediction and continuation probability from the last row.
pub fn decode_step<T: Scalar>(
    history: &Array2<T>,
    text: &Array2<T>,
    store: &ParamStore<T>,
    cfg: &RunConfig,
    modality: Modality,
    text_mask: Option<&[bool]>,
) -> Result<(Array1<T>, T)> {
    if history.nrows() == 0 {
        return Err(Error::shape("decode history rows", "> 0", 0usize));
    }
    if history.ncols() != cfg.d {
        return Err(Error::shape("decode history width", cfg.d, history.ncols()));
    }
    let dm = modality.dim();
    let mut g = Graph::new();
    let bound = bind_all(&mut g, store);
    let dec = bind_decoder(&bound, modality, cfg);
    let x = g.leaf(history.clone());
    let t = g.leaf(text.clone());
    let h = decoder_blocks_forward(&mut g, &dec, x, t, cfg, text_mask);
    let out = linear(&mut g, h, dec.head_w, dec.head_b);
    let last = g.shape(out).0 - 1;
    let row = g.value(out).row(last).to_owned();
    let frame = row.slice(ndarray::s![..dm]).to_owned();
    let logit = row[dm];
    let prob = T::one() / (T::one() + (-logit).exp());
    Ok((frame, prob))
}

/// Teacher-forced forward for a whole sample (value level): predictions for
/// every frame of every modality given ground-truth history.
pub fn teacher_forced_decode<T: Scalar>(
    sample: &SampleRecord,
    text: &Array2<T>,
    store: &ParamStore<T>,
    cfg: &RunConfig,
) -> Result<CoGenOutput<T>> {
    let mut streams = Vec::with_capacity(3);
    for modality in MODALITIES {
        let gt = sample.stream(modality).frames_as::<T>();
        let mut g = Graph::new();
        let bound = bind_all(&mut g, store);
        let dec = bind_decoder(&bound, modality, cfg);
        let t = g.leaf(text.clone());
        let nodes = decoder_teacher_nodes(&mut g, &dec, modality, &gt, t, cfg, None)?;
        let frames = g.value(nodes.frames).clone();
        let probs_node = g.sigmoid(nodes.cont_logits);
        let probs = g.value(probs_node).column(0).to_vec();
        streams.push(GeneratedSequence {
            frames,
            continue_probs: probs,
        });
    }
    let smplerx = streams.pop().expect("three streams");
    let hamer = streams.pop().expect("three streams");
    let pose = streams.pop().expect("three streams");
    Ok(CoGenOutput {
        pose,
        hamer,
        smplerx,
    })
}

/// Free-running generation: each decoder feeds back its own predictions; all
/// three run in lockstep and stop at the first step where every continuation
/// probability drops below one half, or at `m_max` frames.
pub fn autoregressive_generate<T: Scalar>(
    gloss_ids: &[usize],
    store: &ParamStore<T>,
    cfg: &RunConfig,
    m_max: usize,
) -> Result<CoGenOutput<T>> {
    if m_max < 1 {
        return Err(Error::InvalidConfig(format!(
            "frame cap must be at least 1, got {m_max}"
        )));
    }
    let text = encode_gloss(gloss_ids, store, cfg)?;
    let mut frames: Vec<Array2<T>> = MODALITIES
        .iter()
        .map(|m| Array2::zeros((0, m.dim())))
        .collect();
    let mut probs: Vec<Vec<T>> = vec![Vec::new(); 3];
    let half = s::<T>(0.5);
    loop {
        let mut all_stop = true;
        for (k, modality) in MODALITIES.into_iter().enumerate() {
            let history = decoder_input_rows(&frames[k], store, cfg, modality)?;
            let (mut frame, prob) = decode_step(&history, &text, store, cfg, modality, None)?;
            let mut frame2 = Array2::zeros((1, modality.dim()));
            frame2.row_mut(0).assign(&frame.view());
            clamp_to_bounds(&mut frame2, modality);
            frame.assign(&frame2.row(0));
            let mut grown = Array2::zeros((frames[k].nrows() + 1, modality.dim()));
            grown
                .slice_mut(ndarray::s![..frames[k].nrows(), ..])
                .assign(&frames[k]);
            grown.row_mut(frames[k].nrows()).assign(&frame.view());
            frames[k] = grown;
            probs[k].push(prob);
            if prob >= half {
                all_stop = false;
            }
        }
        let m = frames[0].nrows();
        if all_stop || m >= m_max {
            break;
        }
    }
    let mut out = Vec::with_capacity(3);
    for (f, p) in frames.into_iter().zip(probs) {
        out.push(GeneratedSequence {
            frames: f,
            continue_probs: p,
        });
    }
    let smplerx = out.pop().expect("three streams");
    let hamer = out.pop().expect("three streams");
    let pose = out.pop().expect("three streams");
    Ok(CoGenOutput {
        pose,
        hamer,
        smplerx,
    })
}
