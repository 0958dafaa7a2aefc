//! Training loops for the generator (encoder + three decoders + correction)
//! and the back-translation recognizer.
//!
//! Both loops accumulate per-sample gradients over a batch, clip the global
//! norm at 1.0, and apply Adam.  Every run is deterministic given the seed:
//! batch composition, initialization, and augmentation noise all come from
//! named counter-based random streams, so equal seeds reproduce equal losses
//! (wall-clock fields in the logs are the only nondeterministic output).

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backtrans::{init_recognizer, bind_recognizer, recognizer_loss_node, FrameTriple};
use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointKind};
use crate::cogen::{
    bind_decoder, decoder_teacher_nodes, init_all_decoders, loss_tmc, loss_tmc_node,
    teacher_forced_decode, TeacherNodes, MODALITIES,
};
use crate::config::{RunConfig, CONTINUATION_LOSS_WEIGHT};
use crate::corpus::{Modality, SampleRecord, Vocabulary};
use crate::encoder::{bind_encoder, embed_gloss_node, encode_node, init_encoder};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::encoder::encode_gloss;
use crate::occ::{
    bind_occ, cross_correct, dynamic_weights, init_occ, loss_omc, occ_nodes_forward,
    CorrectedTriple,
};
use crate::params::{
    bind_all, clip_global_norm, collect_grads, merge_grads, scale_grads, Adam, Bound, Init,
    ParamStore,
};
use crate::rng::rng_for;
use crate::scalar::{s, Scalar};

/// One line of the generator training log (JSON lines file).  The correction
/// fields are omitted when the correction stage is disabled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub l_tmc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_omc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_c: Option<f64>,
    /// Wall-clock milliseconds since training started (nondeterministic).
    pub elapsed_ms: u64,
}

/// One line of the recognizer training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecognizerLogRecord {
    pub step: usize,
    pub loss: f64,
    pub elapsed_ms: u64,
}

/// Result of a generator training run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
    pub final_tmc: f64,
    pub final_omc: Option<f64>,
}

/// Result of a recognizer training run.
pub struct RecognizerOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<RecognizerLogRecord>,
    pub final_loss: f64,
}

/// Freshly initialized generator parameters (decoders, encoder, correction;
/// correction output adapters and loss scalars start at zero).
pub fn init_generator_params<T: Scalar>(cfg: &RunConfig, vocab_size: usize) -> ParamStore<T> {
    let init = Init::new(cfg.seed);
    let mut store = ParamStore::new();
    init_encoder(&init, &mut store, cfg, vocab_size);
    init_all_decoders(&init, &mut store, cfg);
    init_occ(&init, &mut store, cfg);
    store
}

/// Freshly initialized recognizer parameters.
pub fn init_recognizer_params<T: Scalar>(cfg: &RunConfig, vocab_size: usize) -> ParamStore<T> {
    // Distinct stream from the generator so the two models are independent
    // even under the same seed.
    let init = Init::new(cfg.seed.wrapping_add(0x5261_636f));
    let mut store = ParamStore::new();
    init_recognizer(&init, &mut store, cfg, vocab_size);
    store
}

/// Per-sample forward pass of the full generator; returns the loss node plus
/// the individual loss components for logging.
struct SampleForward {
    total: NodeId,
    tmc: NodeId,
    omc: Option<NodeId>,
    weights: Option<NodeId>,
}

/// Which objective a step trains.
#[derive(Debug, Clone, Copy)]
enum StepMode {
    /// Joint loss over all three decoders.
    Joint,
    /// Single-decoder loss (round-robin when joint co-generation is off).
    Single(Modality),
}

fn forward_sample<T: Scalar>(
    g: &mut Graph<T>,
    store_bound: &Bound,
    sample: &SampleRecord,
    cfg: &RunConfig,
    mode: StepMode,
    with_occ: bool,
) -> Result<SampleForward> {
    let enc = bind_encoder(store_bound, cfg);
    let embedded = embed_gloss_node(g, &enc, &sample.gloss.ids, cfg.d)?;
    let text = encode_node(g, &enc, embedded, cfg, None)?;

    // Decoders to run: all three when the joint loss or correction needs
    // them, otherwise just the round-robin target.
    let run_all = matches!(mode, StepMode::Joint) || with_occ;
    let mut teacher: Vec<Option<TeacherNodes>> = vec![None, None, None];
    for (k, modality) in MODALITIES.into_iter().enumerate() {
        let needed = run_all || matches!(mode, StepMode::Single(m) if m == modality);
        if !needed {
            continue;
        }
        let dec = bind_decoder(store_bound, modality, cfg);
        let gt = sample.stream(modality).frames_as::<T>();
        teacher[k] = Some(decoder_teacher_nodes(g, &dec, modality, &gt, text, cfg, None)?);
    }

    let tmc = match mode {
        StepMode::Joint => {
            let nodes = [
                teacher[0].as_ref().expect("pose run"),
                teacher[1].as_ref().expect("hamer run"),
                teacher[2].as_ref().expect("smplerx run"),
            ];
            loss_tmc_node(g, nodes, sample)?
        }
        StepMode::Single(modality) => {
            let k = MODALITIES.iter().position(|&m| m == modality).unwrap();
            let nodes = teacher[k].as_ref().expect("target run");
            let seq = sample.stream(modality);
            let target = g.leaf(seq.frames_as::<T>());
            let diff = g.sub(nodes.frames, target);
            let mae = g.abs(diff);
            let mae = g.mean_all(mae);
            let bce = g.bce_logits_mean(nodes.cont_logits, seq.flags_column::<T>());
            let bce = g.scale(bce, CONTINUATION_LOSS_WEIGHT);
            g.add(mae, bce)
        }
    };

    if !with_occ {
        return Ok(SampleForward {
            total: tmc,
            tmc,
            omc: None,
            weights: None,
        });
    }

    let occ = bind_occ(store_bound, cfg);
    let streams = [
        teacher[0].as_ref().expect("pose run").frames,
        teacher[1].as_ref().expect("hamer run").frames,
        teacher[2].as_ref().expect("smplerx run").frames,
    ];
    let (_, omc) = occ_nodes_forward(g, &occ, streams, sample, cfg)?;
    let weights = crate::occ::dynamic_weights_node(g, &occ);
    let total = g.add(tmc, omc);
    Ok(SampleForward {
        total,
        tmc,
        omc: Some(omc),
        weights: Some(weights),
    })
}

/// Filter gradients to names under the given prefixes (two-phase training
/// freezes everything else by dropping their gradients).
fn retain_prefixes<T: Scalar>(grads: &mut BTreeMap<String, Array2<T>>, prefixes: &[&str]) {
    grads.retain(|name, _| prefixes.iter().any(|p| name.starts_with(p)));
}

fn append_jsonl<R: Serialize>(path: &Path, record: &R) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record).map_err(|e| Error::json(path, e))?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

fn intermediate_ckpt_path(out: &Path, step: usize) -> PathBuf {
    out.join(format!("model_{step:06}.ckpt"))
}

/// Train the generator on the given samples.  When `out` is set, writes
/// `train_log.jsonl` plus periodic and final checkpoints (`model.ckpt`)
/// under it.
pub fn train_generator(
    samples: &[SampleRecord],
    vocab: &Vocabulary,
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cfg.validate()?;
    type T = f32;
    let mut store = init_generator_params::<T>(cfg, vocab.len());
    let mut adam = Adam::<T>::new(cfg.lr);
    let start = Instant::now();
    let mut log: Vec<LogRecord> = Vec::with_capacity(cfg.steps);
    let log_path = out.map(|dir| dir.join("train_log.jsonl"));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(p) = &log_path {
            // Truncate any previous log so reruns are clean.
            std::fs::write(p, b"").map_err(|e| Error::io(p, e))?;
        }
    }

    // Two-phase: first half reconstruction only, second half correction only
    // with the rest frozen.
    let phase_split = if cfg.two_phase && cfg.occ {
        cfg.steps / 2
    } else {
        usize::MAX
    };

    for step in 0..cfg.steps {
        let in_correction_phase = step >= phase_split;
        let with_occ = cfg.occ && (!cfg.two_phase || in_correction_phase);
        let with_tmc = !in_correction_phase;
        let mode = if cfg.cogen || in_correction_phase {
            StepMode::Joint
        } else {
            StepMode::Single(MODALITIES[step % 3])
        };

        let mut rng = rng_for(cfg.seed, "batch", step as u64);
        let mut accum: BTreeMap<String, Array2<T>> = BTreeMap::new();
        let mut tmc_sum = 0.0f64;
        let mut omc_sum = 0.0f64;
        let mut weights_sum = [0.0f64; 3];
        for _ in 0..cfg.batch {
            let idx = rng.gen_range(0..samples.len());
            let sample = &samples[idx];
            let mut g = Graph::new();
            let bound = bind_all(&mut g, &store);
            let fwd = forward_sample(&mut g, &bound, sample, cfg, mode, with_occ)?;
            let loss_node = if with_tmc {
                fwd.total
            } else {
                fwd.omc.expect("correction phase runs correction")
            };
            let loss_value = g.value(loss_node)[[0, 0]].to_f64_lossy();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    value: loss_value,
                });
            }
            tmc_sum += g.value(fwd.tmc)[[0, 0]].to_f64_lossy();
            if let Some(omc) = fwd.omc {
                omc_sum += g.value(omc)[[0, 0]].to_f64_lossy();
            }
            if let Some(w) = fwd.weights {
                let wv = g.value(w);
                for k in 0..3 {
                    weights_sum[k] += wv[[0, k]].to_f64_lossy();
                }
            }
            let grads = g.backward(loss_node);
            let mut sample_grads = collect_grads(&grads, &bound);
            if in_correction_phase {
                retain_prefixes(&mut sample_grads, &["occ."]);
            }
            merge_grads(&mut accum, sample_grads);
        }
        scale_grads(&mut accum, 1.0 / cfg.batch as f64);
        clip_global_norm(&mut accum, 1.0);
        adam.step(&mut store, &accum)?;

        let denom = cfg.batch as f64;
        let record = LogRecord {
            step,
            l_tmc: tmc_sum / denom,
            l_omc: with_occ.then_some(omc_sum / denom),
            w_a: with_occ.then_some(weights_sum[0] / denom),
            w_b: with_occ.then_some(weights_sum[1] / denom),
            w_c: with_occ.then_some(weights_sum[2] / denom),
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        if let Some(p) = &log_path {
            append_jsonl(p, &record)?;
        }
        log.push(record);

        if let Some(dir) = out {
            let due = cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0;
            if due && step + 1 < cfg.steps {
                let ckpt = Checkpoint {
                    kind: CheckpointKind::Generator,
                    config: cfg.clone(),
                    step: step + 1,
                    vocab: vocab.clone(),
                    params: store.clone(),
                };
                save_checkpoint(&intermediate_ckpt_path(dir, step + 1), &ckpt)?;
            }
        }
    }

    // Final losses are measured over the whole training set at the final
    // parameters, not read off the last minibatch, so they do not inherit
    // batch-composition noise.
    let (final_tmc, final_omc) = full_set_losses(&store, samples, cfg)?;
    let checkpoint = Checkpoint {
        kind: CheckpointKind::Generator,
        config: cfg.clone(),
        step: cfg.steps,
        vocab: vocab.clone(),
        params: store,
    };
    if let Some(dir) = out {
        save_checkpoint(&dir.join("model.ckpt"), &checkpoint)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        log,
        final_tmc,
        final_omc,
    })
}

/// Reconstruction and correction losses of a parameter set over a whole
/// sample set, teacher-forced, averaged per sample.  The correction loss is
/// reported only when the correction stage is enabled.
pub fn full_set_losses<T: Scalar>(
    store: &ParamStore<T>,
    samples: &[SampleRecord],
    cfg: &RunConfig,
) -> Result<(f64, Option<f64>)> {
    let mut tmc_sum = 0.0f64;
    let mut omc_sum = 0.0f64;
    for sample in samples {
        let text = encode_gloss(&sample.gloss.ids, store, cfg)?;
        let out = teacher_forced_decode(sample, &text, store, cfg)?;
        tmc_sum += loss_tmc(&out, sample)?.to_f64_lossy();
        if cfg.occ {
            let corrected = CorrectedTriple {
                pose: cross_correct(
                    &out.pose.frames,
                    &out.hamer.frames,
                    &out.smplerx.frames,
                    store,
                    cfg,
                    Modality::Pose,
                )?,
                hamer: cross_correct(
                    &out.hamer.frames,
                    &out.pose.frames,
                    &out.smplerx.frames,
                    store,
                    cfg,
                    Modality::Hamer,
                )?,
                smplerx: cross_correct(
                    &out.smplerx.frames,
                    &out.pose.frames,
                    &out.hamer.frames,
                    store,
                    cfg,
                    Modality::Smplerx,
                )?,
            };
            let weights = dynamic_weights(
                store.get("occ.alpha")?[[0, 0]],
                store.get("occ.beta")?[[0, 0]],
                store.get("occ.gamma")?[[0, 0]],
            )?;
            omc_sum += loss_omc(&corrected, sample, &weights)?.to_f64_lossy();
        }
    }
    let n = samples.len() as f64;
    let omc = cfg.occ.then(|| omc_sum / n);
    Ok((tmc_sum / n, omc))
}

/// Train the recognizer on ground-truth sequences only, with seeded Gaussian
/// jitter as augmentation.  When `out` is set, writes
/// `recognizer_log.jsonl` and `recognizer.ckpt` under it.
pub fn train_recognizer(
    samples: &[SampleRecord],
    vocab: &Vocabulary,
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<RecognizerOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cfg.validate()?;
    type T = f32;
    let mut store = init_recognizer_params::<T>(cfg, vocab.len());
    let mut adam = Adam::<T>::new(cfg.lr);
    let start = Instant::now();
    let mut log: Vec<RecognizerLogRecord> = Vec::with_capacity(cfg.recognizer_steps);
    let log_path = out.map(|dir| dir.join("recognizer_log.jsonl"));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let Some(p) = &log_path {
            std::fs::write(p, b"").map_err(|e| Error::io(p, e))?;
        }
    }

    for step in 0..cfg.recognizer_steps {
        let mut rng = rng_for(cfg.seed, "rec-batch", step as u64);
        let mut accum: BTreeMap<String, Array2<T>> = BTreeMap::new();
        let mut loss_sum = 0.0f64;
        for slot in 0..cfg.batch {
            let idx = rng.gen_range(0..samples.len());
            let sample = &samples[idx];
            // Jitter is a separate stream keyed by (step, slot) so batch
            // composition and noise are independent draws.
            let mut noise_rng = rng_for(
                cfg.seed,
                "rec-jitter",
                (step as u64) << 16 | slot as u64,
            );
            let sigma = cfg.recognizer_noise;
            let mut jittered = |m: Modality| -> Array2<T> {
                let mut f = sample.stream(m).frames_as::<T>();
                if sigma > 0.0 {
                    for v in f.iter_mut() {
                        *v += s::<T>(sigma * crate::rng::normal(&mut noise_rng));
                    }
                }
                f
            };
            let pose = jittered(Modality::Pose);
            let hamer = jittered(Modality::Hamer);
            let smplerx = jittered(Modality::Smplerx);
            let mut g = Graph::new();
            let bound = bind_all(&mut g, &store);
            let rec = bind_recognizer(&bound, cfg);
            let triple = FrameTriple {
                pose: &pose,
                hamer: &hamer,
                smplerx: &smplerx,
            };
            let loss = recognizer_loss_node(&mut g, &rec, &triple, &sample.gloss.ids, cfg)?;
            let loss_value = g.value(loss)[[0, 0]].to_f64_lossy();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    value: loss_value,
                });
            }
            loss_sum += loss_value;
            let grads = g.backward(loss);
            merge_grads(&mut accum, collect_grads(&grads, &bound));
        }
        scale_grads(&mut accum, 1.0 / cfg.batch as f64);
        clip_global_norm(&mut accum, 1.0);
        adam.step(&mut store, &accum)?;
        let record = RecognizerLogRecord {
            step,
            loss: loss_sum / cfg.batch as f64,
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        if let Some(p) = &log_path {
            append_jsonl(p, &record)?;
        }
        log.push(record);
    }

    let checkpoint = Checkpoint {
        kind: CheckpointKind::Recognizer,
        config: cfg.clone(),
        step: cfg.recognizer_steps,
        vocab: vocab.clone(),
        params: store,
    };
    if let Some(dir) = out {
        save_checkpoint(&dir.join("recognizer.ckpt"), &checkpoint)?;
    }
    let final_loss = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    Ok(RecognizerOutcome {
        checkpoint,
        log,
        final_loss,
    })
}
