//! Gloss-text encoder and the attention building blocks shared by the whole
//! model family.
//!
//! Token ids are embedded (table lookup + bias + sinusoidal positions) and run
//! through post-norm transformer blocks: `x -> LN(x + MHA(x)) -> LN(.. + FFN)`
//! with GELU feed-forward layers.  The multi-head attention, layer-norm, and
//! feed-forward graph helpers here are reused by the frame decoders, the
//! correction stage, and the recognizer.

use ndarray::{Array1, Array2};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{bind_all, Bound, Init, ParamStore};
use crate::scalar::{s, Scalar};

/// Base of the sinusoid frequency ladder.
const PE_BASE: f64 = 10_000.0;

/// Sinusoidal position vector: even channels sine, odd channels cosine, with
/// frequency `1 / PE_BASE^(2i/d)`.  `d` must be even.
pub fn positional_encoding<T: Scalar>(position: usize, d: usize) -> Result<Array1<T>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::OddDimension { dim: d });
    }
    let mut out = Array1::zeros(d);
    for i in 0..d / 2 {
        let rate = 1.0 / PE_BASE.powf(2.0 * i as f64 / d as f64);
        let angle = position as f64 * rate;
        out[2 * i] = s::<T>(angle.sin());
        out[2 * i + 1] = s::<T>(angle.cos());
    }
    Ok(out)
}

/// Stacked positional encodings for positions `0..len`.
pub fn pe_matrix<T: Scalar>(len: usize, d: usize) -> Result<Array2<T>> {
    let mut out = Array2::zeros((len, d));
    for p in 0..len {
        out.row_mut(p).assign(&positional_encoding::<T>(p, d)?);
    }
    Ok(out)
}

/// Scaled dot-product attention (single head): `softmax(Q Kᵀ / sqrt(d)) V`.
/// `mask[i][j] == false` blocks query `i` from key `j`; a fully blocked query
/// row is a degenerate mask error.
pub fn attention<T: Scalar>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    mask: Option<&Array2<bool>>,
) -> Result<Array2<T>> {
    attention_with_weights(q, k, v, mask).map(|(out, _)| out)
}

/// [`attention`] variant that also returns the probability matrix (rows sum
/// to one over unmasked keys).
pub fn attention_with_weights<T: Scalar>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    mask: Option<&Array2<bool>>,
) -> Result<(Array2<T>, Array2<T>)> {
    let d = q.ncols();
    if k.ncols() != d {
        return Err(Error::shape("attention key width", d, k.ncols()));
    }
    if v.nrows() != k.nrows() {
        return Err(Error::shape("attention value count", k.nrows(), v.nrows()));
    }
    if let Some(m) = mask {
        if m.dim() != (q.nrows(), k.nrows()) {
            return Err(Error::shape(
                "attention mask",
                format!("{}x{}", q.nrows(), k.nrows()),
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        for (i, row) in m.rows().into_iter().enumerate() {
            if !row.iter().any(|&allowed| allowed) {
                return Err(Error::DegenerateMask { row: i });
            }
        }
    }
    let scale = s::<T>(1.0 / (d as f64).sqrt());
    let scores = q.dot(&k.t()).mapv(|x| x * scale);
    let mut weights: Array2<T> = Array2::zeros(scores.dim());
    for (i, row) in scores.rows().into_iter().enumerate() {
        let allowed = |j: usize| mask.is_none_or(|m| m[[i, j]]);
        let mut max = T::neg_infinity();
        for (j, &x) in row.iter().enumerate() {
            if allowed(j) && x > max {
                max = x;
            }
        }
        let mut denom = T::zero();
        for (j, &x) in row.iter().enumerate() {
            if allowed(j) {
                let e = (x - max).exp();
                weights[[i, j]] = e;
                denom += e;
            }
        }
        for j in 0..k.nrows() {
            weights[[i, j]] /= denom;
        }
    }
    let out = weights.dot(v);
    Ok((out, weights))
}

// ---------------------------------------------------------------------------
// Graph-side building blocks (shared across encoder / decoders / correction /
// recognizer).
// ---------------------------------------------------------------------------

/// Bound multi-head attention parameters.
pub struct MhaNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub bq: NodeId,
    pub bk: NodeId,
    pub bv: NodeId,
    pub bo: NodeId,
}

pub struct LnNodes {
    pub gain: NodeId,
    pub bias: NodeId,
}

pub struct FfnNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

pub fn init_mha<T: Scalar>(init: &Init, store: &mut ParamStore<T>, prefix: &str, d: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        init.xavier(store, &format!("{prefix}.{w}"), d, d);
    }
    for b in ["bq", "bk", "bv", "bo"] {
        init.zeros(store, &format!("{prefix}.{b}"), 1, d);
    }
}

pub fn init_layer_norm<T: Scalar>(init: &Init, store: &mut ParamStore<T>, prefix: &str, d: usize) {
    init.ones(store, &format!("{prefix}.gain"), 1, d);
    init.zeros(store, &format!("{prefix}.bias"), 1, d);
}

pub fn init_ffn<T: Scalar>(
    init: &Init,
    store: &mut ParamStore<T>,
    prefix: &str,
    d: usize,
    d_ff: usize,
) {
    init.xavier(store, &format!("{prefix}.w1"), d, d_ff);
    init.zeros(store, &format!("{prefix}.b1"), 1, d_ff);
    init.xavier(store, &format!("{prefix}.w2"), d_ff, d);
    init.zeros(store, &format!("{prefix}.b2"), 1, d);
}

pub fn bind_mha(bound: &Bound, prefix: &str) -> MhaNodes {
    MhaNodes {
        wq: bound.id(&format!("{prefix}.wq")),
        wk: bound.id(&format!("{prefix}.wk")),
        wv: bound.id(&format!("{prefix}.wv")),
        wo: bound.id(&format!("{prefix}.wo")),
        bq: bound.id(&format!("{prefix}.bq")),
        bk: bound.id(&format!("{prefix}.bk")),
        bv: bound.id(&format!("{prefix}.bv")),
        bo: bound.id(&format!("{prefix}.bo")),
    }
}

pub fn bind_layer_norm(bound: &Bound, prefix: &str) -> LnNodes {
    LnNodes {
        gain: bound.id(&format!("{prefix}.gain")),
        bias: bound.id(&format!("{prefix}.bias")),
    }
}

pub fn bind_ffn(bound: &Bound, prefix: &str) -> FfnNodes {
    FfnNodes {
        w1: bound.id(&format!("{prefix}.w1")),
        b1: bound.id(&format!("{prefix}.b1")),
        w2: bound.id(&format!("{prefix}.w2")),
        b2: bound.id(&format!("{prefix}.b2")),
    }
}

/// `x @ w + b` with a broadcast bias row.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let xw = g.matmul(x, w);
    g.add_row(xw, b)
}

/// Layer norm: standardize rows then apply gain and bias.
pub fn layer_norm<T: Scalar>(g: &mut Graph<T>, x: NodeId, ln: &LnNodes) -> NodeId {
    let n = g.normalize_rows(x);
    let scaled = g.mul_row(n, ln.gain);
    g.add_row(scaled, ln.bias)
}

/// Two-layer GELU feed-forward.
pub fn ffn<T: Scalar>(g: &mut Graph<T>, x: NodeId, f: &FfnNodes) -> NodeId {
    let h = linear(g, x, f.w1, f.b1);
    let h = g.gelu(h);
    linear(g, h, f.w2, f.b2)
}

/// Multi-head attention; queries from `xq`, keys/values from `xkv`.
/// `mask` has shape (rows of xq, rows of xkv) and applies to every head.
pub fn mha<T: Scalar>(
    g: &mut Graph<T>,
    m: &MhaNodes,
    xq: NodeId,
    xkv: NodeId,
    n_heads: usize,
    mask: Option<&Array2<bool>>,
) -> NodeId {
    let d = g.shape(xq).1;
    assert!(n_heads > 0 && d % n_heads == 0, "d {d} not divisible by heads {n_heads}");
    let dk = d / n_heads;
    let q = linear(g, xq, m.wq, m.bq);
    let k = linear(g, xkv, m.wk, m.bk);
    let v = linear(g, xkv, m.wv, m.bv);
    let mut heads: Option<NodeId> = None;
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dk, (h + 1) * dk);
        let kh = g.slice_cols(k, h * dk, (h + 1) * dk);
        let vh = g.slice_cols(v, h * dk, (h + 1) * dk);
        let scores = g.matmul_nt(qh, kh);
        let scaled = g.scale(scores, 1.0 / (dk as f64).sqrt());
        let probs = g.softmax_rows(scaled, mask.cloned());
        let oh = g.matmul(probs, vh);
        heads = Some(match heads {
            Some(acc) => g.concat_cols(acc, oh),
            None => oh,
        });
    }
    let concat = heads.expect("at least one head");
    linear(g, concat, m.wo, m.bo)
}

// ---------------------------------------------------------------------------
// Encoder stack.
// ---------------------------------------------------------------------------

pub struct EncoderBlockNodes {
    pub attn: MhaNodes,
    pub n1: LnNodes,
    pub ffn: FfnNodes,
    pub n2: LnNodes,
}

pub struct EncoderNodes {
    pub embed_w: NodeId,
    pub embed_b: NodeId,
    pub blocks: Vec<EncoderBlockNodes>,
}

/// Register a stack of self-attention blocks under a name prefix (used by
/// the gloss encoder and reused by the recognizer's frame trunk).
pub fn init_encoder_blocks<T: Scalar>(
    init: &Init,
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &RunConfig,
) {
    for i in 0..cfg.n_blocks {
        init_mha(init, store, &format!("{prefix}.b{i}.attn"), cfg.d);
        init_layer_norm(init, store, &format!("{prefix}.b{i}.n1"), cfg.d);
        init_ffn(init, store, &format!("{prefix}.b{i}.ffn"), cfg.d, cfg.d_ff);
        init_layer_norm(init, store, &format!("{prefix}.b{i}.n2"), cfg.d);
    }
}

pub fn bind_encoder_blocks(bound: &Bound, prefix: &str, cfg: &RunConfig) -> Vec<EncoderBlockNodes> {
    (0..cfg.n_blocks)
        .map(|i| EncoderBlockNodes {
            attn: bind_mha(bound, &format!("{prefix}.b{i}.attn")),
            n1: bind_layer_norm(bound, &format!("{prefix}.b{i}.n1")),
            ffn: bind_ffn(bound, &format!("{prefix}.b{i}.ffn")),
            n2: bind_layer_norm(bound, &format!("{prefix}.b{i}.n2")),
        })
        .collect()
}

/// Register encoder parameters (embedding table + blocks) in the store.
pub fn init_encoder<T: Scalar>(
    init: &Init,
    store: &mut ParamStore<T>,
    cfg: &RunConfig,
    vocab_size: usize,
) {
    init.xavier(store, "encoder.embed.w", vocab_size, cfg.d);
    init.zeros(store, "encoder.embed.b", 1, cfg.d);
    init_encoder_blocks(init, store, "encoder", cfg);
}

pub fn bind_encoder(bound: &Bound, cfg: &RunConfig) -> EncoderNodes {
    EncoderNodes {
        embed_w: bound.id("encoder.embed.w"),
        embed_b: bound.id("encoder.embed.b"),
        blocks: bind_encoder_blocks(bound, "encoder", cfg),
    }
}

/// Embedding lookup + bias + positional encoding, as a graph node.
pub fn embed_gloss_node<T: Scalar>(
    g: &mut Graph<T>,
    enc: &EncoderNodes,
    ids: &[usize],
    d: usize,
) -> Result<NodeId> {
    let vocab_rows = g.shape(enc.embed_w).0;
    for &id in ids {
        if id >= vocab_rows {
            return Err(Error::shape("gloss id", format!("< {vocab_rows}"), id));
        }
    }
    let gathered = g.gather_rows(enc.embed_w, ids);
    let biased = g.add_row(gathered, enc.embed_b);
    let pe = g.leaf(pe_matrix::<T>(ids.len(), d)?);
    Ok(g.add(biased, pe))
}

/// Expand a per-key mask to the (queries, keys) matrix shape used by MHA.
fn expand_key_mask(rows: usize, key_mask: &[bool]) -> Array2<bool> {
    Array2::from_shape_fn((rows, key_mask.len()), |(_, j)| key_mask[j])
}

/// Run a stack of self-attention blocks over already-embedded rows.
pub fn encoder_blocks_forward<T: Scalar>(
    g: &mut Graph<T>,
    blocks: &[EncoderBlockNodes],
    x: NodeId,
    n_heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<NodeId> {
    if let Some(mask) = key_mask {
        if mask.len() != g.shape(x).0 {
            return Err(Error::shape("encoder key mask length", g.shape(x).0, mask.len()));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::DegenerateMask { row: 0 });
        }
    }
    let rows = g.shape(x).0;
    let mask = key_mask.map(|m| expand_key_mask(rows, m));
    let mut h = x;
    for block in blocks {
        let attn = mha(g, &block.attn, h, h, n_heads, mask.as_ref());
        let r1 = g.add(h, attn);
        let n1 = layer_norm(g, r1, &block.n1);
        let ff = ffn(g, n1, &block.ffn);
        let r2 = g.add(n1, ff);
        h = layer_norm(g, r2, &block.n2);
    }
    Ok(h)
}

/// Run the encoder blocks over already-embedded rows.
pub fn encode_node<T: Scalar>(
    g: &mut Graph<T>,
    enc: &EncoderNodes,
    x: NodeId,
    cfg: &RunConfig,
    key_mask: Option<&[bool]>,
) -> Result<NodeId> {
    encoder_blocks_forward(g, &enc.blocks, x, cfg.n_heads, key_mask)
}

/// Embed a gloss id sequence (lookup + bias + positions) without running the
/// encoder blocks.
pub fn embed_gloss<T: Scalar>(
    ids: &[usize],
    store: &ParamStore<T>,
    cfg: &RunConfig,
) -> Result<Array2<T>> {
    let mut g = Graph::new();
    let bound = bind_all(&mut g, store);
    let enc = bind_encoder(&bound, cfg);
    let node = embed_gloss_node(&mut g, &enc, ids, cfg.d)?;
    Ok(g.value(node).clone())
}

/// Run the encoder blocks over pre-embedded rows (forward only).
pub fn encode<T: Scalar>(
    embedded: &Array2<T>,
    store: &ParamStore<T>,
    cfg: &RunConfig,
    key_mask: Option<&[bool]>,
) -> Result<Array2<T>> {
    if embedded.ncols() != cfg.d {
        return Err(Error::shape("encoder input width", cfg.d, embedded.ncols()));
    }
    let mut g = Graph::new();
    let bound = bind_all(&mut g, store);
    let enc = bind_encoder(&bound, cfg);
    let x = g.leaf(embedded.clone());
    let out = encode_node(&mut g, &enc, x, cfg, key_mask)?;
    Ok(g.value(out).clone())
}

/// Embed gloss ids and encode them (forward only).
pub fn encode_gloss<T: Scalar>(
    ids: &[usize],
    store: &ParamStore<T>,
    cfg: &RunConfig,
) -> Result<Array2<T>> {
    let mut g = Graph::new();
    let bound = bind_all(&mut g, store);
    let enc = bind_encoder(&bound, cfg);
    let x = embed_gloss_node(&mut g, &enc, ids, cfg.d)?;
    let out = encode_node(&mut g, &enc, x, cfg, None)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NORM_EPS;
    use ndarray::arr2;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            d: 8,
            n_heads: 2,
            n_blocks: 2,
            d_ff: 16,
            ..RunConfig::default()
        }
    }

    fn demo_store(cfg: &RunConfig, vocab: usize, seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        init_encoder(&Init::new(seed), &mut store, cfg, vocab);
        store
    }

    #[test]
    fn positional_encoding_matches_hand_values() {
        let pe = positional_encoding::<f64>(1, 4).unwrap();
        // Channel 0: sin(1 / 10000^0) = sin(1).
        assert!((pe[0] - 1.0f64.sin()).abs() < 1e-12);
        assert!((pe[0] - 0.841471).abs() < 1e-6);
        assert!((pe[1] - 1.0f64.cos()).abs() < 1e-12);
        // Channels 2/3 use rate 1/10000^(2/4) = 1/100.
        assert!((pe[2] - (0.01f64).sin()).abs() < 1e-12);
        assert!((pe[3] - (0.01f64).cos()).abs() < 1e-12);
        // Position 0 alternates 0, 1.
        let pe0 = positional_encoding::<f64>(0, 6).unwrap();
        for i in 0..3 {
            assert_eq!(pe0[2 * i], 0.0);
            assert_eq!(pe0[2 * i + 1], 1.0);
        }
    }

    #[test]
    fn positional_encoding_rejects_odd_dimension() {
        assert!(matches!(
            positional_encoding::<f64>(3, 5),
            Err(Error::OddDimension { dim: 5 })
        ));
        assert!(positional_encoding::<f64>(3, 0).is_err());
    }

    #[test]
    fn attention_identity_queries_match_hand_computation() {
        // Q = K = I2, V = [[1,2],[3,4]]: scores row 0 = [1,0]/sqrt(2).
        let q = arr2(&[[1.0f64, 0.0], [0.0, 1.0]]);
        let v = arr2(&[[1.0f64, 2.0], [3.0, 4.0]]);
        let (out, w) = attention_with_weights(&q, &q, &v, None).unwrap();
        let e = (1.0f64 / 2.0f64.sqrt()).exp();
        let w00 = e / (e + 1.0);
        assert!((w[[0, 0]] - w00).abs() < 1e-12);
        assert!((w[[0, 1]] - (1.0 - w00)).abs() < 1e-12);
        // Row 0 output = w00 * [1,2] + (1-w00) * [3,4].
        let expect0 = [w00 + 3.0 * (1.0 - w00), 2.0 * w00 + 4.0 * (1.0 - w00)];
        assert!((out[[0, 0]] - expect0[0]).abs() < 1e-12);
        assert!((out[[0, 1]] - expect0[1]).abs() < 1e-12);
        // Frozen values for the same case.
        assert!((w[[0, 0]] - 0.669762).abs() < 1e-5);
        assert!((out[[0, 0]] - 1.660477).abs() < 1e-5);
        assert!((out[[0, 1]] - 2.660477).abs() < 1e-5);
        // Symmetry: row 1 mirrors row 0.
        assert!((w[[1, 1]] - w00).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_sum_to_one_under_random_masks() {
        for salt in 0..20 {
            let q = Array2::from_shape_fn((4, 6), |(r, c)| ((r * 7 + c + salt) as f64 * 0.37).sin());
            let k = Array2::from_shape_fn((5, 6), |(r, c)| ((r * 5 + c + salt) as f64 * 0.53).cos());
            let v = Array2::from_shape_fn((5, 3), |(r, c)| (r + c) as f64 * 0.1);
            let mask = Array2::from_shape_fn((4, 5), |(r, c)| (r + c + salt as usize) % 3 != 0 || c == 0);
            let (_, w) = attention_with_weights(&q, &k, &v, Some(&mask)).unwrap();
            for (i, row) in w.rows().into_iter().enumerate() {
                let sum: f64 = row.sum();
                assert!((sum - 1.0).abs() < 1e-6, "row {i} sums to {sum}");
                for (j, &p) in row.iter().enumerate() {
                    if !mask[[i, j]] {
                        assert_eq!(p, 0.0, "masked weight must be exactly zero");
                    }
                }
            }
        }
    }

    #[test]
    fn fully_masked_query_row_is_degenerate() {
        let q = Array2::<f64>::zeros((2, 3));
        let mask = Array2::from_shape_fn((2, 2), |(i, _)| i == 0);
        let err = attention_with_weights(&q, &q.clone(), &q.clone(), Some(&mask)).unwrap_err();
        assert!(matches!(err, Error::DegenerateMask { row: 1 }));
    }

    #[test]
    fn embed_gloss_matches_manual_gather_exactly() {
        let cfg = tiny_cfg();
        let store = demo_store(&cfg, 10, 3);
        let ids = [4usize, 0, 7, 4];
        let out = embed_gloss(&ids, &store, &cfg).unwrap();
        let w = store.get("encoder.embed.w").unwrap();
        let b = store.get("encoder.embed.b").unwrap();
        for (n, &id) in ids.iter().enumerate() {
            let pe = positional_encoding::<f64>(n, cfg.d).unwrap();
            for c in 0..cfg.d {
                let expect = (w[[id, c]] + b[[0, c]]) + pe[c];
                assert_eq!(out[[n, c]].to_bits(), expect.to_bits(), "token {n} ch {c}");
            }
        }
    }

    #[test]
    fn embed_gloss_rejects_out_of_range_id() {
        let cfg = tiny_cfg();
        let store = demo_store(&cfg, 10, 3);
        assert!(embed_gloss(&[3, 10], &store, &cfg).is_err());
    }

    #[test]
    fn single_token_encode_matches_hand_unrolled_block() {
        // With one token, self-attention weight is exactly 1, so the whole
        // block unrolls to closed-form row operations we can recompute with
        // plain ndarray math.
        let cfg = RunConfig {
            d: 4,
            n_heads: 1,
            n_blocks: 1,
            d_ff: 8,
            ..RunConfig::default()
        };
        let store = demo_store(&cfg, 6, 11);
        let x = arr2(&[[0.3f64, -0.7, 0.21, 0.9]]);
        let got = encode(&x, &store, &cfg, None).unwrap();

        let p = |n: &str| store.get(n).unwrap().clone();
        let row = |m: &Array2<f64>| m.row(0).to_owned();
        // Attention with a single position: output = (x Wv + bv) Wo + bo.
        let v = x.dot(&p("encoder.b0.attn.wv")) + row(&p("encoder.b0.attn.bv"));
        let attn = v.dot(&p("encoder.b0.attn.wo")) + row(&p("encoder.b0.attn.bo"));
        let r1 = &x + &attn;
        let ln = |x: &Array2<f64>, prefix: &str| -> Array2<f64> {
            let gain = p(&format!("{prefix}.gain"));
            let bias = p(&format!("{prefix}.bias"));
            let n = x.ncols() as f64;
            let mean = x.sum() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = (var + NORM_EPS).sqrt();
            let mut out = x.clone();
            for (c, val) in out.row_mut(0).iter_mut().enumerate() {
                *val = (*val - mean) / s * gain[[0, c]] + bias[[0, c]];
            }
            out
        };
        let n1 = ln(&r1, "encoder.b0.n1");
        let gelu = |x: f64| {
            let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        };
        let h = (n1.dot(&p("encoder.b0.ffn.w1")) + row(&p("encoder.b0.ffn.b1"))).mapv(gelu);
        let f = h.dot(&p("encoder.b0.ffn.w2")) + row(&p("encoder.b0.ffn.b2"));
        let r2 = &n1 + &f;
        let expect = ln(&r2, "encoder.b0.n2");
        for c in 0..cfg.d {
            assert!(
                (got[[0, c]] - expect[[0, c]]).abs() < 1e-12,
                "channel {c}: {} vs {}",
                got[[0, c]],
                expect[[0, c]]
            );
        }
    }

    #[test]
    fn encode_without_positions_is_permutation_equivariant() {
        let cfg = tiny_cfg();
        let store = demo_store(&cfg, 6, 5);
        let x = Array2::from_shape_fn((5, cfg.d), |(r, c)| ((r * 13 + c) as f64 * 0.41).sin());
        let perm = [3usize, 0, 4, 1, 2];
        let mut px = Array2::zeros((5, cfg.d));
        for (to, &from) in perm.iter().enumerate() {
            px.row_mut(to).assign(&x.row(from));
        }
        let y = encode(&x, &store, &cfg, None).unwrap();
        let py = encode(&px, &store, &cfg, None).unwrap();
        for (to, &from) in perm.iter().enumerate() {
            for c in 0..cfg.d {
                assert!(
                    (py[[to, c]] - y[[from, c]]).abs() < 1e-5,
                    "row {to} ch {c}"
                );
            }
        }
    }

    #[test]
    fn padded_keys_with_mask_leave_real_rows_unchanged() {
        let cfg = tiny_cfg();
        let store = demo_store(&cfg, 6, 6);
        let x = Array2::from_shape_fn((3, cfg.d), |(r, c)| ((r * 3 + c) as f64 * 0.29).cos());
        let y = encode(&x, &store, &cfg, None).unwrap();

        let mut padded = Array2::zeros((5, cfg.d));
        for r in 0..3 {
            padded.row_mut(r).assign(&x.row(r));
        }
        // Pad rows carry arbitrary junk; the key mask must hide them.
        padded.row_mut(3).fill(9.0);
        padded.row_mut(4).fill(-4.0);
        let mask = [true, true, true, false, false];
        let yp = encode(&padded, &store, &cfg, Some(&mask)).unwrap();
        for r in 0..3 {
            for c in 0..cfg.d {
                assert!(
                    (yp[[r, c]] - y[[r, c]]).abs() < 1e-5,
                    "row {r} ch {c}: {} vs {}",
                    yp[[r, c]],
                    y[[r, c]]
                );
            }
        }
    }

    #[test]
    fn all_false_key_mask_is_degenerate() {
        let cfg = tiny_cfg();
        let store = demo_store(&cfg, 6, 6);
        let x = Array2::<f64>::zeros((2, cfg.d));
        assert!(matches!(
            encode(&x, &store, &cfg, Some(&[false, false])),
            Err(Error::DegenerateMask { .. })
        ));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = RunConfig {
            d: 8,
            n_heads: 2,
            n_blocks: 2,
            d_ff: 16,
            ..RunConfig::default()
        };
        let store = demo_store(&cfg, 5, 21);
        let ids = [1usize, 4, 2];
        let probe = Array2::from_shape_fn((3, cfg.d), |(r, c)| ((r * 11 + c) as f64 * 0.7).sin());

        let forward = |st: &ParamStore<f64>| -> f64 {
            let mut g = Graph::new();
            let bound = bind_all(&mut g, st);
            let enc = bind_encoder(&bound, &cfg);
            let x = embed_gloss_node(&mut g, &enc, &ids, cfg.d).unwrap();
            let out = encode_node(&mut g, &enc, x, &cfg, None).unwrap();
            let pr = g.leaf(probe.clone());
            let prod = g.mul(out, pr);
            let loss = g.mean_all(prod);
            g.value(loss)[[0, 0]]
        };

        // Analytic gradients.
        let mut g = Graph::new();
        let bound = bind_all(&mut g, &store);
        let enc = bind_encoder(&bound, &cfg);
        let x = embed_gloss_node(&mut g, &enc, &ids, cfg.d).unwrap();
        let out = encode_node(&mut g, &enc, x, &cfg, None).unwrap();
        let pr = g.leaf(probe.clone());
        let prod = g.mul(out, pr);
        let loss = g.mean_all(prod);
        let grads = g.backward(loss);

        let h = 1e-4;
        let mut checked = 0usize;
        let mut failed = 0usize;
        for name in store.names() {
            let base = store.get(name).unwrap().clone();
            let analytic = grads.get_or_zeros(bound.id(name), base.dim());
            // Probe a handful of coordinates per tensor.
            let coords: Vec<(usize, usize)> = (0..base.nrows().min(3))
                .flat_map(|r| (0..base.ncols().min(3)).map(move |c| (r, c)))
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
            }
        }
        assert!(checked > 100, "checked only {checked} coords");
        assert_eq!(failed, 0, "{failed}/{checked} gradient coords out of tolerance");
    }
}
