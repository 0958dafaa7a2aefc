//! Cross-modal correction: each generated stream is refined by attending to
//! the other two, and the correction objective weighs the three streams with
//! learnable softmax weights.
//!
//! For a target stream, all three streams are first adapted into the shared
//! model width.  The two context streams are concatenated along time and
//! serve as keys/values for cross-attention from the target rows; the result
//! passes through post-norm attention/feed-forward blocks and a final output
//! adapter back to the target's frame width, added residually onto the
//! original frames.  The output adapter starts at zero, so correction is
//! exactly the identity until training moves it.
//!
//! The correction loss is a convex combination of the three per-stream mean
//! squared errors, with weights `softmax(alpha, beta, gamma)`; the three
//! scalars are learned alongside everything else and start at zero (equal
//! thirds).

use ndarray::Array2;

use crate::cogen::{centered_node, CoGenOutput, MODALITIES};
use crate::config::RunConfig;
use crate::corpus::{Modality, SampleRecord};
use crate::encoder::{
    bind_ffn, bind_layer_norm, bind_mha, ffn, init_ffn, init_layer_norm, init_mha, layer_norm,
    linear, mha, FfnNodes, LnNodes, MhaNodes,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{bind_all, Bound, Init, ParamStore};
use crate::scalar::{s, Scalar};

/// Normalized loss weights for (pose, hamer, smplerx).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T: Scalar> {
    pub w_a: T,
    pub w_b: T,
    pub w_c: T,
}

/// Softmax over the three loss-weight scalars, with max subtraction for
/// stability.  Each weight lies in (0,1) and the three sum to one.
pub fn dynamic_weights<T: Scalar>(alpha: T, beta: T, gamma: T) -> Result<LossWeights<T>> {
    for v in [alpha, beta, gamma] {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                context: "loss-weight scalars".into(),
                value: v.to_f64_lossy(),
            });
        }
    }
    let max = alpha.max(beta).max(gamma);
    let ea = (alpha - max).exp();
    let eb = (beta - max).exp();
    let ec = (gamma - max).exp();
    let z = ea + eb + ec;
    Ok(LossWeights {
        w_a: ea / z,
        w_b: eb / z,
        w_c: ec / z,
    })
}

/// The three corrected streams (frames only; continuation channels are not
/// touched by correction).
#[derive(Debug, Clone)]
pub struct CorrectedTriple<T: Scalar> {
    pub pose: Array2<T>,
    pub hamer: Array2<T>,
    pub smplerx: Array2<T>,
}

impl<T: Scalar> CorrectedTriple<T> {
    pub fn stream(&self, modality: Modality) -> &Array2<T> {
        match modality {
            Modality::Pose => &self.pose,
            Modality::Hamer => &self.hamer,
            Modality::Smplerx => &self.smplerx,
        }
    }
}

/// Context streams for a given target, in canonical concatenation order.
pub fn context_of(target: Modality) -> [Modality; 2] {
    match target {
        Modality::Pose => [Modality::Hamer, Modality::Smplerx],
        Modality::Hamer => [Modality::Pose, Modality::Smplerx],
        Modality::Smplerx => [Modality::Pose, Modality::Hamer],
    }
}

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

pub struct OccBlockNodes {
    pub cross: MhaNodes,
    pub n1: LnNodes,
    pub ffn: FfnNodes,
    pub n2: LnNodes,
}

pub struct OccTargetNodes {
    pub blocks: Vec<OccBlockNodes>,
    pub out_w: NodeId,
    pub out_b: NodeId,
}

pub struct OccNodes {
    /// Shared per-modality input adapters, indexed in canonical order.
    pub in_w: [NodeId; 3],
    pub in_b: [NodeId; 3],
    pub targets: [OccTargetNodes; 3],
    pub alpha: NodeId,
    pub beta: NodeId,
    pub gamma: NodeId,
}

/// Register all correction parameters.  Output adapters and the three loss
/// scalars start at zero.
pub fn init_occ<T: Scalar>(init: &Init, store: &mut ParamStore<T>, cfg: &RunConfig) {
    for modality in MODALITIES {
        let tag = modality.tag();
        init.xavier(store, &format!("occ.in.{tag}.w"), modality.dim(), cfg.d);
        init.zeros(store, &format!("occ.in.{tag}.b"), 1, cfg.d);
    }
    for target in MODALITIES {
        let tag = target.tag();
        for i in 0..cfg.occ_blocks {
            init_mha(init, store, &format!("occ.{tag}.b{i}.cross"), cfg.d);
            init_layer_norm(init, store, &format!("occ.{tag}.b{i}.n1"), cfg.d);
            init_ffn(init, store, &format!("occ.{tag}.b{i}.ffn"), cfg.d, cfg.d_ff);
            init_layer_norm(init, store, &format!("occ.{tag}.b{i}.n2"), cfg.d);
        }
        init.zeros(store, &format!("occ.out.{tag}.w"), cfg.d, target.dim());
        init.zeros(store, &format!("occ.out.{tag}.b"), 1, target.dim());
    }
    init.zeros(store, "occ.alpha", 1, 1);
    init.zeros(store, "occ.beta", 1, 1);
    init.zeros(store, "occ.gamma", 1, 1);
}

pub fn bind_occ(bound: &Bound, cfg: &RunConfig) -> OccNodes {
    let adapters: Vec<(NodeId, NodeId)> = MODALITIES
        .iter()
        .map(|m| {
            (
                bound.id(&format!("occ.in.{}.w", m.tag())),
                bound.id(&format!("occ.in.{}.b", m.tag())),
            )
        })
        .collect();
    let targets: Vec<OccTargetNodes> = MODALITIES
        .iter()
        .map(|target| {
            let tag = target.tag();
            OccTargetNodes {
                blocks: (0..cfg.occ_blocks)
                    .map(|i| OccBlockNodes {
                        cross: bind_mha(bound, &format!("occ.{tag}.b{i}.cross")),
                        n1: bind_layer_norm(bound, &format!("occ.{tag}.b{i}.n1")),
                        ffn: bind_ffn(bound, &format!("occ.{tag}.b{i}.ffn")),
                        n2: bind_layer_norm(bound, &format!("occ.{tag}.b{i}.n2")),
                    })
                    .collect(),
                out_w: bound.id(&format!("occ.out.{tag}.w")),
                out_b: bound.id(&format!("occ.out.{tag}.b")),
            }
        })
        .collect();
    let mut targets = targets.into_iter();
    OccNodes {
        in_w: [adapters[0].0, adapters[1].0, adapters[2].0],
        in_b: [adapters[0].1, adapters[1].1, adapters[2].1],
        targets: [
            targets.next().expect("pose"),
            targets.next().expect("hamer"),
            targets.next().expect("smplerx"),
        ],
        alpha: bound.id("occ.alpha"),
        beta: bound.id("occ.beta"),
        gamma: bound.id("occ.gamma"),
    }
}

fn modality_index(modality: Modality) -> usize {
    MODALITIES
        .iter()
        .position(|&m| m == modality)
        .expect("canonical modality")
}

// ---------------------------------------------------------------------------
// Forward (graph side).
// ---------------------------------------------------------------------------

/// Correct one target stream given the frame nodes of all three streams
/// (canonical order).  Returns the corrected M x D_target node.
pub fn cross_correct_node<T: Scalar>(
    g: &mut Graph<T>,
    occ: &OccNodes,
    streams: [NodeId; 3],
    target: Modality,
    cfg: &RunConfig,
) -> NodeId {
    let ti = modality_index(target);
    let [c1, c2] = context_of(target);
    let adapt = |g: &mut Graph<T>, idx: usize| -> NodeId {
        let centered = centered_node(g, streams[idx], MODALITIES[idx]);
        linear(g, centered, occ.in_w[idx], occ.in_b[idx])
    };
    let q0 = adapt(g, ti);
    let k1 = adapt(g, modality_index(c1));
    let k2 = adapt(g, modality_index(c2));
    let kv = g.concat_rows(k1, k2);
    let tnodes = &occ.targets[ti];
    let mut x = q0;
    for block in &tnodes.blocks {
        let ca = mha(g, &block.cross, x, kv, cfg.occ_heads, None);
        let r1 = g.add(x, ca);
        let x1 = layer_norm(g, r1, &block.n1);
        let ff = ffn(g, x1, &block.ffn);
        let r2 = g.add(x1, ff);
        x = layer_norm(g, r2, &block.n2);
    }
    let correction = linear(g, x, tnodes.out_w, tnodes.out_b);
    g.add(streams[ti], correction)
}

/// Softmax weights over (alpha, beta, gamma) as a 1x3 node.
pub fn dynamic_weights_node<T: Scalar>(g: &mut Graph<T>, occ: &OccNodes) -> NodeId {
    let ab = g.concat_cols(occ.alpha, occ.beta);
    let abc = g.concat_cols(ab, occ.gamma);
    g.softmax_rows(abc, None)
}

/// Weighted correction loss over the three corrected streams, as a node:
/// `w_a * mse(pose) + w_b * mse(hamer) + w_c * mse(smplerx)` with per-element
/// mean squared errors.
pub fn loss_omc_node<T: Scalar>(
    g: &mut Graph<T>,
    corrected: [NodeId; 3],
    gt: &SampleRecord,
    weights: NodeId,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for (k, modality) in MODALITIES.into_iter().enumerate() {
        let seq = gt.stream(modality);
        if g.shape(corrected[k]).0 != seq.len() {
            return Err(Error::shape(
                format!("{} corrected frame count", modality.tag()),
                seq.len(),
                g.shape(corrected[k]).0,
            ));
        }
        let target = g.leaf(seq.frames_as::<T>());
        let diff = g.sub(corrected[k], target);
        let sq = g.square(diff);
        let mse = g.mean_all(sq);
        let w = g.pick(weights, 0, k);
        let term = g.mul(w, mse);
        total = Some(match total {
            Some(acc) => g.add(acc, term),
            None => term,
        });
    }
    Ok(total.expect("three terms"))
}

/// Full correction stage on top of teacher-forced or generated frame nodes:
/// corrects all three streams and returns them with the weighted loss.
pub fn occ_nodes_forward<T: Scalar>(
    g: &mut Graph<T>,
    occ: &OccNodes,
    streams: [NodeId; 3],
    gt: &SampleRecord,
    cfg: &RunConfig,
) -> Result<([NodeId; 3], NodeId)> {
    let corrected = [
        cross_correct_node(g, occ, streams, Modality::Pose, cfg),
        cross_correct_node(g, occ, streams, Modality::Hamer, cfg),
        cross_correct_node(g, occ, streams, Modality::Smplerx, cfg),
    ];
    let weights = dynamic_weights_node(g, occ);
    let loss = loss_omc_node(g, corrected, gt, weights)?;
    Ok((corrected, loss))
}

// ---------------------------------------------------------------------------
// Value-level wrappers.
// ---------------------------------------------------------------------------

/// Correct one target stream from raw frame matrices.  `ctx1`/`ctx2` follow
/// the canonical context order for the target.
pub fn cross_correct<T: Scalar>(
    target_frames: &Array2<T>,
    ctx1: &Array2<T>,
    ctx2: &Array2<T>,
    store: &ParamStore<T>,
    cfg: &RunConfig,
    target: Modality,
) -> Result<Array2<T>> {
    let m = target_frames.nrows();
    if ctx1.nrows() != m || ctx2.nrows() != m {
        return Err(Error::shape(
            "correction context frame count",
            m,
            if ctx1.nrows() != m { ctx1.nrows() } else { ctx2.nrows() },
        ));
    }
    let [c1, c2] = context_of(target);
    if target_frames.ncols() != target.dim() {
        return Err(Error::shape("correction target width", target.dim(), target_frames.ncols()));
    }
    if ctx1.ncols() != c1.dim() || ctx2.ncols() != c2.dim() {
        return Err(Error::shape(
            "correction context width",
            format!("{}/{}", c1.dim(), c2.dim()),
            format!("{}/{}", ctx1.ncols(), ctx2.ncols()),
        ));
    }
    let mut g = Graph::new();
    let bound = bind_all(&mut g, store);
    let occ = bind_occ(&bound, cfg);
    // Place the three matrices at their canonical stream slots.
    let mut slots: [Option<Array2<T>>; 3] = [None, None, None];
    slots[modality_index(target)] = Some(target_frames.clone());
    slots[modality_index(c1)] = Some(ctx1.clone());
    slots[modality_index(c2)] = Some(ctx2.clone());
    let streams: Vec<NodeId> = slots
        .into_iter()
        .map(|m| g.leaf(m.expect("all slots filled")))
        .collect();
    let out = cross_correct_node(&mut g, &occ, [streams[0], streams[1], streams[2]], target, cfg);
    Ok(g.value(out).clone())
}

/// Value-level weighted correction loss.
pub fn loss_omc<T: Scalar>(
    corrected: &CorrectedTriple<T>,
    gt: &SampleRecord,
    weights: &LossWeights<T>,
) -> Result<T> {
    let mut terms = [T::zero(); 3];
    for (k, modality) in MODALITIES.into_iter().enumerate() {
        let c = corrected.stream(modality);
        let seq = gt.stream(modality);
        if c.nrows() != seq.len() {
            return Err(Error::shape(
                format!("{} corrected frame count", modality.tag()),
                seq.len(),
                c.nrows(),
            ));
        }
        let target = seq.frames_as::<T>();
        let diff = c - &target;
        terms[k] = diff.mapv(|x| x * x).sum() / s::<T>(diff.len() as f64);
    }
    Ok(weights.w_a * terms[0] + weights.w_b * terms[1] + weights.w_c * terms[2])
}

/// Read the loss-weight scalars out of a parameter store.
pub fn stored_weights<T: Scalar>(store: &ParamStore<T>) -> Result<LossWeights<T>> {
    let alpha = store.get("occ.alpha")?[[0, 0]];
    let beta = store.get("occ.beta")?[[0, 0]];
    let gamma = store.get("occ.gamma")?[[0, 0]];
    dynamic_weights(alpha, beta, gamma)
}

/// Apply correction to generated output and compute the weighted loss against
/// ground truth.
pub fn occ_forward_and_loss<T: Scalar>(
    cogen_out: &CoGenOutput<T>,
    gt: &SampleRecord,
    store: &ParamStore<T>,
    cfg: &RunConfig,
) -> Result<(CorrectedTriple<T>, T)> {
    cogen_out.validate_alignment()?;
    let p = &cogen_out.pose.frames;
    let h = &cogen_out.hamer.frames;
    let x = &cogen_out.smplerx.frames;
    let corrected = CorrectedTriple {
        pose: cross_correct(p, h, x, store, cfg, Modality::Pose)?,
        hamer: cross_correct(h, p, x, store, cfg, Modality::Hamer)?,
        smplerx: cross_correct(x, p, h, store, cfg, Modality::Smplerx)?,
    };
    let weights = stored_weights(store)?;
    let loss = loss_omc(&corrected, gt, &weights)?;
    Ok((corrected, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cogen::GeneratedSequence;
    use crate::corpus::{GlossSequence, ModalitySequence};
    use crate::graph::NORM_EPS;
    use crate::rng::rng_for;
    use rand::Rng;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            d: 8,
            n_heads: 2,
            n_blocks: 1,
            d_ff: 16,
            occ_blocks: 2,
            occ_heads: 2,
            ..RunConfig::default()
        }
    }

    fn occ_store(cfg: &RunConfig, seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        init_occ(&Init::new(seed), &mut store, cfg);
        store
    }

    fn demo_frames(modality: Modality, m: usize, salt: u64) -> Array2<f64> {
        Array2::from_shape_fn((m, modality.dim()), |(r, c)| {
            (((r * 37 + c * 3) as f64 + salt as f64) * 0.113).sin() * 0.4 + 0.5
        })
    }

    fn demo_sample(m: usize, salt: u64) -> SampleRecord {
        let seq = |modality: Modality| {
            ModalitySequence::with_end_marker(
                modality,
                demo_frames(modality, m, salt).mapv(|x| x as f32),
            )
            .unwrap()
        };
        SampleRecord {
            id: format!("occ_{salt}"),
            gloss_text: "G01".into(),
            gloss: GlossSequence::new(vec![3]).unwrap(),
            pose: seq(Modality::Pose),
            hamer: seq(Modality::Hamer),
            smplerx: seq(Modality::Smplerx),
        }
    }

    #[test]
    fn correction_is_bitwise_identity_at_initialization() {
        let cfg = tiny_cfg();
        let store = occ_store(&cfg, 9);
        let target = demo_frames(Modality::Pose, 4, 1);
        let ctx1 = demo_frames(Modality::Hamer, 4, 2);
        let ctx2 = demo_frames(Modality::Smplerx, 4, 3);
        let out = cross_correct(&target, &ctx1, &ctx2, &store, &cfg, Modality::Pose).unwrap();
        for (idx, &v) in target.indexed_iter() {
            assert_eq!(v.to_bits(), out[idx].to_bits(), "element {idx:?}");
        }
    }

    #[test]
    fn dynamic_weights_equal_logits_give_exact_thirds() {
        let w = dynamic_weights(0.0f64, 0.0, 0.0).unwrap();
        assert_eq!(w.w_a, 1.0 / 3.0);
        assert_eq!(w.w_b, 1.0 / 3.0);
        assert_eq!(w.w_c, 1.0 / 3.0);
        // Any common value behaves identically (max subtraction).
        for c in [-40.0, -1.0, 0.5, 123.0] {
            let w = dynamic_weights(c, c, c).unwrap();
            assert_eq!(w.w_a, 1.0 / 3.0);
            assert_eq!(w.w_b, 1.0 / 3.0);
            assert_eq!(w.w_c, 1.0 / 3.0);
        }
    }

    #[test]
    fn dynamic_weights_log_two_case() {
        let w = dynamic_weights(2.0f64.ln(), 0.0, 0.0).unwrap();
        assert!((w.w_a - 0.5).abs() < 1e-12);
        assert!((w.w_b - 0.25).abs() < 1e-12);
        assert!((w.w_c - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dynamic_weights_rejects_non_finite_inputs() {
        assert!(dynamic_weights(f64::NAN, 0.0, 0.0).is_err());
        assert!(dynamic_weights(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn weights_stay_on_the_simplex_over_many_draws() {
        // Spread capped below ~36 so the open bounds are representable in
        // f64 (beyond that the dominant weight rounds to exactly 1.0).
        let mut rng = rng_for(99, "occ-simplex", 0);
        for _ in 0..100_000 {
            let a: f64 = rng.gen_range(-15.0..15.0);
            let b: f64 = rng.gen_range(-15.0..15.0);
            let c: f64 = rng.gen_range(-15.0..15.0);
            let w = dynamic_weights(a, b, c).unwrap();
            let sum = w.w_a + w.w_b + w.w_c;
            assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
            for v in [w.w_a, w.w_b, w.w_c] {
                assert!(v > 0.0 && v < 1.0, "weight {v}");
            }
        }
    }

    #[test]
    fn weights_saturate_gracefully_at_extreme_spreads() {
        // Max subtraction keeps huge logits finite; weights stay in [0,1]
        // and sum to one even when the small terms underflow.
        for (a, b, c) in [(300.0f64, -300.0, -300.0), (1e8, 0.0, -1e8), (-500.0, -500.0, 500.0)] {
            let w = dynamic_weights(a, b, c).unwrap();
            let sum = w.w_a + w.w_b + w.w_c;
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
            for v in [w.w_a, w.w_b, w.w_c] {
                assert!((0.0..=1.0).contains(&v) && v.is_finite(), "weight {v}");
            }
        }
    }

    #[test]
    fn weights_are_shift_invariant() {
        let mut rng = rng_for(100, "occ-shift", 0);
        for _ in 0..1000 {
            let a: f64 = rng.gen_range(-5.0..5.0);
            let b: f64 = rng.gen_range(-5.0..5.0);
            let c: f64 = rng.gen_range(-5.0..5.0);
            let shift: f64 = rng.gen_range(-20.0..20.0);
            let w0 = dynamic_weights(a, b, c).unwrap();
            let w1 = dynamic_weights(a + shift, b + shift, c + shift).unwrap();
            assert!((w0.w_a - w1.w_a).abs() < 1e-9);
            assert!((w0.w_b - w1.w_b).abs() < 1e-9);
            assert!((w0.w_c - w1.w_c).abs() < 1e-9);
        }
    }

    #[test]
    fn correction_matches_hand_unrolled_attention_oracle() {
        // Single-head single-block instance small enough to recompute with
        // the standalone attention function and explicit row operations.
        let cfg = RunConfig {
            d: 4,
            n_heads: 1,
            n_blocks: 1,
            d_ff: 8,
            occ_blocks: 1,
            occ_heads: 1,
            ..RunConfig::default()
        };
        let mut store = occ_store(&cfg, 17);
        // Give the output adapter real values so the path is exercised.
        let mut rng = rng_for(17, "occ-oracle", 0);
        for name in ["occ.out.pose.w", "occ.out.pose.b"] {
            for v in store.get_mut(name).unwrap().iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let m = 2;
        let target = demo_frames(Modality::Pose, m, 5);
        let ctx1 = demo_frames(Modality::Hamer, m, 6);
        let ctx2 = demo_frames(Modality::Smplerx, m, 7);
        let got = cross_correct(&target, &ctx1, &ctx2, &store, &cfg, Modality::Pose).unwrap();

        let p = |n: &str| store.get(n).unwrap().clone();
        let brow = |m: &Array2<f64>| m.row(0).to_owned();
        let adapt = |x: &Array2<f64>, tag: &str, center: f64| -> Array2<f64> {
            x.mapv(|v| v - center).dot(&p(&format!("occ.in.{tag}.w")))
                + brow(&p(&format!("occ.in.{tag}.b")))
        };
        let q0 = adapt(&target, "pose", crate::cogen::input_center(Modality::Pose));
        let mut kv = Array2::zeros((2 * m, cfg.d));
        kv.slice_mut(ndarray::s![..m, ..]).assign(&adapt(&ctx1, "hamer", 0.0));
        kv.slice_mut(ndarray::s![m.., ..]).assign(&adapt(&ctx2, "smplerx", 0.0));
        let pre = "occ.pose.b0";
        let q = q0.dot(&p(&format!("{pre}.cross.wq"))) + brow(&p(&format!("{pre}.cross.bq")));
        let k = kv.dot(&p(&format!("{pre}.cross.wk"))) + brow(&p(&format!("{pre}.cross.bk")));
        let v = kv.dot(&p(&format!("{pre}.cross.wv"))) + brow(&p(&format!("{pre}.cross.bv")));
        let att = crate::encoder::attention(&q, &k, &v, None).unwrap();
        let ca = att.dot(&p(&format!("{pre}.cross.wo"))) + brow(&p(&format!("{pre}.cross.bo")));
        let r1 = &q0 + &ca;
        let ln = |x: &Array2<f64>, prefix: &str| -> Array2<f64> {
            let gain = p(&format!("{prefix}.gain"));
            let bias = p(&format!("{prefix}.bias"));
            let mut out = x.clone();
            for mut row in out.rows_mut() {
                let n = row.len() as f64;
                let mean = row.sum() / n;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let s = (var + NORM_EPS).sqrt();
                for (c, v) in row.iter_mut().enumerate() {
                    *v = (*v - mean) / s * gain[[0, c]] + bias[[0, c]];
                }
            }
            out
        };
        let x1 = ln(&r1, &format!("{pre}.n1"));
        let gelu = |x: f64| {
            let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        };
        let hmid = (x1.dot(&p(&format!("{pre}.ffn.w1"))) + brow(&p(&format!("{pre}.ffn.b1"))))
            .mapv(gelu);
        let f = hmid.dot(&p(&format!("{pre}.ffn.w2"))) + brow(&p(&format!("{pre}.ffn.b2")));
        let x2 = ln(&(&x1 + &f), &format!("{pre}.n2"));
        let corr = x2.dot(&p("occ.out.pose.w")) + brow(&p("occ.out.pose.b"));
        let expect = &target + &corr;
        for (idx, &e) in expect.indexed_iter() {
            assert!(
                (got[idx] - e).abs() < 1e-6,
                "element {idx:?}: {} vs {e}",
                got[idx]
            );
        }
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let cfg = tiny_cfg();
        let store = occ_store(&cfg, 1);
        let target = demo_frames(Modality::Pose, 4, 1);
        let ctx1 = demo_frames(Modality::Hamer, 3, 2);
        let ctx2 = demo_frames(Modality::Smplerx, 4, 3);
        assert!(cross_correct(&target, &ctx1, &ctx2, &store, &cfg, Modality::Pose).is_err());
    }

    #[test]
    fn loss_matches_brute_force_and_fixed_points() {
        let sample = demo_sample(3, 4);
        let weights = LossWeights {
            w_a: 0.2,
            w_b: 0.3,
            w_c: 0.5,
        };
        let corrected = CorrectedTriple {
            pose: sample.pose.frames_as::<f64>() + 0.1,
            hamer: sample.hamer.frames_as::<f64>() - 0.2,
            smplerx: sample.smplerx.frames_as::<f64>() + 0.05,
        };
        let got = loss_omc(&corrected, &sample, &weights).unwrap();
        let mut expect = 0.0;
        for (w, modality) in [(0.2, Modality::Pose), (0.3, Modality::Hamer), (0.5, Modality::Smplerx)] {
            let c = corrected.stream(modality);
            let t = sample.stream(modality);
            let mut sq = 0.0;
            for r in 0..3 {
                for ch in 0..modality.dim() {
                    let d = c[[r, ch]] - t.frames[[r, ch]] as f64;
                    sq += d * d;
                }
            }
            expect += w * sq / (3.0 * modality.dim() as f64);
        }
        assert!((got - expect).abs() < 1e-6);

        // Exact match: zero loss.
        let exact = CorrectedTriple {
            pose: sample.pose.frames_as::<f64>(),
            hamer: sample.hamer.frames_as::<f64>(),
            smplerx: sample.smplerx.frames_as::<f64>(),
        };
        assert_eq!(loss_omc(&exact, &sample, &weights).unwrap(), 0.0);

        // Equal per-stream errors: convex combination keeps the value.
        let sq3 = CorrectedTriple {
            pose: sample.pose.frames_as::<f64>() + 3.0f64.sqrt(),
            hamer: sample.hamer.frames_as::<f64>() + 3.0f64.sqrt(),
            smplerx: sample.smplerx.frames_as::<f64>() + 3.0f64.sqrt(),
        };
        let thirds = dynamic_weights(0.0, 0.0, 0.0).unwrap();
        let loss = loss_omc(&sq3, &sample, &thirds).unwrap();
        assert!((loss - 3.0).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn scaling_errors_scales_the_loss_proportionally() {
        let sample = demo_sample(3, 8);
        let weights = dynamic_weights(0.4, -0.2, 0.1).unwrap();
        let base = CorrectedTriple {
            pose: sample.pose.frames_as::<f64>() + 0.2,
            hamer: sample.hamer.frames_as::<f64>() - 0.15,
            smplerx: sample.smplerx.frames_as::<f64>() + 0.07,
        };
        let l1 = loss_omc(&base, &sample, &weights).unwrap();
        for scale in [2.0f64, 5.0, 0.25] {
            let root = scale.sqrt();
            let scaled = CorrectedTriple {
                pose: sample.pose.frames_as::<f64>()
                    + (&base.pose - &sample.pose.frames_as::<f64>()) * root,
                hamer: sample.hamer.frames_as::<f64>()
                    + (&base.hamer - &sample.hamer.frames_as::<f64>()) * root,
                smplerx: sample.smplerx.frames_as::<f64>()
                    + (&base.smplerx - &sample.smplerx.frames_as::<f64>()) * root,
            };
            let l2 = loss_omc(&scaled, &sample, &weights).unwrap();
            assert!(
                (l2 - scale * l1).abs() < 1e-6 * scale.max(1.0),
                "scale {scale}: {l2} vs {}",
                scale * l1
            );
        }
    }

    #[test]
    fn forward_and_loss_with_identity_correction() {
        let cfg = tiny_cfg();
        let store = occ_store(&cfg, 30);
        let sample = demo_sample(3, 12);
        let gt_out = CoGenOutput {
            pose: GeneratedSequence {
                frames: sample.pose.frames_as::<f64>(),
                continue_probs: vec![0.9; 3],
            },
            hamer: GeneratedSequence {
                frames: sample.hamer.frames_as::<f64>(),
                continue_probs: vec![0.9; 3],
            },
            smplerx: GeneratedSequence {
                frames: sample.smplerx.frames_as::<f64>(),
                continue_probs: vec![0.9; 3],
            },
        };
        // Output equal to ground truth: zero loss at init.
        let (_, loss) = occ_forward_and_loss(&gt_out, &sample, &store, &cfg).unwrap();
        assert_eq!(loss, 0.0);

        // Output off ground truth: loss equals the uncorrected weighted MSE,
        // because correction is the identity at init.
        let off = CoGenOutput {
            pose: GeneratedSequence {
                frames: &gt_out.pose.frames + 0.1,
                continue_probs: vec![0.9; 3],
            },
            hamer: GeneratedSequence {
                frames: &gt_out.hamer.frames - 0.3,
                continue_probs: vec![0.9; 3],
            },
            smplerx: GeneratedSequence {
                frames: &gt_out.smplerx.frames + 0.2,
                continue_probs: vec![0.9; 3],
            },
        };
        let (corrected, loss) = occ_forward_and_loss(&off, &sample, &store, &cfg).unwrap();
        assert_eq!(corrected.pose, off.pose.frames);
        let thirds = dynamic_weights(0.0, 0.0, 0.0).unwrap();
        let expect = (thirds.w_a * 0.1f64.powi(2)
            + thirds.w_b * 0.3f64.powi(2)
            + thirds.w_c * 0.2f64.powi(2))
        .abs();
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
    }

    #[test]
    fn loss_gradients_include_the_weight_scalars() {
        let cfg = RunConfig {
            d: 8,
            n_heads: 2,
            n_blocks: 1,
            d_ff: 16,
            occ_blocks: 1,
            occ_heads: 2,
            ..RunConfig::default()
        };
        let mut store = occ_store(&cfg, 41);
        // Non-zero output adapters and distinct scalars so every path and
        // every weight has signal.
        let mut rng = rng_for(41, "occ-grad", 0);
        for target in MODALITIES {
            for part in ["w", "b"] {
                let name = format!("occ.out.{}.{part}", target.tag());
                for v in store.get_mut(&name).unwrap().iter_mut() {
                    *v = rng.gen_range(-0.2..0.2);
                }
            }
        }
        store.get_mut("occ.alpha").unwrap()[[0, 0]] = 0.3;
        store.get_mut("occ.beta").unwrap()[[0, 0]] = -0.1;
        store.get_mut("occ.gamma").unwrap()[[0, 0]] = 0.2;

        let sample = demo_sample(3, 13);
        let streams_v: Vec<Array2<f64>> = MODALITIES
            .iter()
            .map(|&m| demo_frames(m, 3, 21))
            .collect();

        let forward = |st: &ParamStore<f64>| -> f64 {
            let mut g = Graph::new();
            let bound = bind_all(&mut g, st);
            let occ = bind_occ(&bound, &cfg);
            let streams = [
                g.leaf(streams_v[0].clone()),
                g.leaf(streams_v[1].clone()),
                g.leaf(streams_v[2].clone()),
            ];
            let (_, loss) = occ_nodes_forward(&mut g, &occ, streams, &sample, &cfg).unwrap();
            g.value(loss)[[0, 0]]
        };

        let mut g = Graph::new();
        let bound = bind_all(&mut g, &store);
        let occ = bind_occ(&bound, &cfg);
        let streams = [
            g.leaf(streams_v[0].clone()),
            g.leaf(streams_v[1].clone()),
            g.leaf(streams_v[2].clone()),
        ];
        let (_, loss) = occ_nodes_forward(&mut g, &occ, streams, &sample, &cfg).unwrap();
        let grads = g.backward(loss);

        let h = 1e-4;
        let mut checked = 0usize;
        let mut failed = 0usize;
        let mut scalar_grad_nonzero = 0usize;
        for name in store.names() {
            let base = store.get(name).unwrap().clone();
            let analytic = grads.get_or_zeros(bound.id(name), base.dim());
            let coords: Vec<(usize, usize)> = (0..base.nrows().min(2))
                .flat_map(|r| (0..base.ncols().min(2)).map(move |c| (r, c)))
                .collect();
            for (r, c) in coords {
                let mut plus = store.clone();
                plus.get_mut(name).unwrap()[[r, c]] += h;
                let mut minus = store.clone();
                minus.get_mut(name).unwrap()[[r, c]] -= h;
                let numeric = (forward(&plus) - forward(&minus)) / (2.0 * h);
                let a = analytic[[r, c]];
                let denom = a.abs().max(numeric.abs()).max(1e-4);
                checked += 1;
                if (a - numeric).abs() / denom >= 1e-3 {
                    failed += 1;
                }
                if matches!(name.as_str(), "occ.alpha" | "occ.beta" | "occ.gamma")
                    && a.abs() > 1e-8
                {
                    scalar_grad_nonzero += 1;
                }
            }
        }
        assert!(checked > 80, "checked only {checked}");
        assert_eq!(failed, 0, "{failed}/{checked} correction gradient coords out of tolerance");
        assert_eq!(scalar_grad_nonzero, 3, "all three weight scalars must receive gradient");
    }
}
