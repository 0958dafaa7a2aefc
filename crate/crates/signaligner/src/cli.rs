//! Command-line surface: synthetic-corpus preparation, generator and
//! recognizer training, free-running generation with collaborative correction
//! and optional rendering, split evaluation, and a four-cell ablation harness
//! (joint co-generation on/off x correction stage on/off).
//!
//! Exit codes: 0 on success, 2 for usage/configuration errors, 3 for
//! data/vocabulary errors, 4 for numeric failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::backtrans::{backtranslate, FrameTriple};
use crate::checkpoint::{load_checkpoint, Checkpoint, CheckpointKind};
use crate::cogen::{autoregressive_generate, clamp_to_bounds, teacher_forced_decode, CoGenOutput};
use crate::config::RunConfig;
use crate::corpus::{
    generate_toy_corpus, load_split, tensor_rel_path, toy_vocabulary, write_manifest,
    write_modality_file, DatasetManifest, ManifestEntry, Modality, ModalitySequence, SampleRecord,
    Split, ToyConfig, Vocabulary,
};
use crate::encoder::encode_gloss;
use crate::error::{Error, Result};
use crate::metrics::{
    fid_proxy, frame_features, psnr, score_text, ssim, ImageScore, MetricsReport,
};
use crate::occ::cross_correct;
use crate::params::ParamStore;
use crate::render::{save_frames, synthesize, DEFAULT_FPS, DEFAULT_SYNTHESIZER};
use crate::train::{train_generator, train_recognizer};

/// Environment variable capping evaluation parallelism.
pub const THREADS_ENV: &str = "SIGNALIGNER_THREADS";

/// Vocabulary file written next to the split manifests.
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Debug, Parser)]
#[command(
    name = "signaligner",
    version,
    about = "Text-to-sign generation: corpus tools, training, generation, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic three-stream corpus with manifests and vocabulary.
    Prepare(PrepareArgs),
    /// Train the generator (encoder + three decoders + correction) or the
    /// back-translation recognizer.
    Train(TrainArgs),
    /// Generate the three streams for a gloss text, apply correction, and
    /// optionally render frames.
    Generate(GenerateArgs),
    /// Generate for every sample of a split, back-translate, and score text
    /// and image metrics into a JSON report.
    Evaluate(EvaluateArgs),
    /// Run the four-cell ablation grid (joint co-generation x correction) on
    /// a noisy corpus and emit a combined report.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of training samples.
    #[arg(long)]
    pub samples: usize,
    /// Number of dev-split samples.
    #[arg(long, default_value_t = 8)]
    pub dev_samples: usize,
    /// Number of test-split samples.
    #[arg(long, default_value_t = 8)]
    pub test_samples: usize,
    /// Corpus seed; equal seeds reproduce byte-identical directory trees.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Measurement-noise amplitude added to all three modality streams.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Size of the synthetic gloss inventory.
    #[arg(long, default_value_t = 20)]
    pub vocab_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Generator,
    Recognizer,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory produced by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoints and the JSON-lines training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Train the three decoders on a rotating per-modality loss instead of
    /// the joint three-stream loss.
    #[arg(long)]
    pub no_cogen: bool,
    /// Disable the collaborative correction stage and its loss.
    #[arg(long)]
    pub no_occ: bool,
    /// Which model to train.
    #[arg(long, value_enum, default_value_t = ModelKind::Generator)]
    pub model: ModelKind,
    /// Config override `KEY=VALUE` (repeatable), applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Gloss text: whitespace-separated tokens from the training vocabulary.
    #[arg(long)]
    pub text: String,
    /// Output directory for the generated tensor files.
    #[arg(long)]
    pub out: PathBuf,
    /// Also rasterize the corrected streams to PNG frames.
    #[arg(long)]
    pub render: bool,
    /// Frame synthesizer plug-in used with --render.
    #[arg(long, default_value = DEFAULT_SYNTHESIZER)]
    pub synthesizer: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Recognizer checkpoint (not needed with --identity).
    #[arg(long, required_unless_present = "identity")]
    pub recognizer: Option<PathBuf>,
    /// Dataset directory produced by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Which split to score: train, dev, or test.
    #[arg(long, value_parser = parse_split)]
    pub split: Split,
    /// Report output path (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Score the reference streams against themselves instead of generating;
    /// checks the metric plumbing end to end.
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Output directory for corpus, per-cell runs, and the combined report.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of training samples for the ablation corpus.
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    /// Number of held-out samples used for scoring.
    #[arg(long, default_value_t = 32)]
    pub holdout: usize,
    /// Corpus seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Measurement-noise amplitude for the ablation corpus.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Size of the synthetic gloss inventory.
    #[arg(long, default_value_t = 20)]
    pub vocab_size: usize,
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override `KEY=VALUE` (repeatable), applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::from_tag(s).ok_or_else(|| format!("expected train, dev, or test, got {s:?}"))
}

/// Dispatch one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers.
// ---------------------------------------------------------------------------

/// Worker count for per-sample evaluation: the machine's available
/// parallelism, capped by `SIGNALIGNER_THREADS` when set to a positive
/// integer.
fn thread_cap() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(n) if n >= 1 => available.min(n),
        _ => available,
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, overrides)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override must be KEY=VALUE, got {item:?}"))
        })?;
        cfg.set(key.trim(), value.trim())
            .map_err(Error::InvalidConfig)?;
    }
    cfg.validate()?;
    Ok(())
}

fn write_vocab(dir: &Path, vocab: &Vocabulary) -> Result<()> {
    let path = dir.join(VOCAB_FILE);
    let json = serde_json::to_string_pretty(&vocab.corpus_tokens())
        .map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Read the vocabulary written by `prepare` next to the manifests.
pub fn read_vocab(dir: &Path) -> Result<Vocabulary> {
    let path = dir.join(VOCAB_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let tokens: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    Ok(Vocabulary::from_corpus_tokens(tokens))
}

fn require_kind(ckpt: &Checkpoint, kind: CheckpointKind, path: &Path) -> Result<()> {
    if ckpt.kind != kind {
        return Err(Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: format!("expected a {kind} checkpoint, found {}", ckpt.kind),
        });
    }
    Ok(())
}

fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn summary_line(r: &MetricsReport) -> String {
    format!(
        "split {} ({} samples): BLEU-1 {:.2} BLEU-4 {:.2} ROUGE-L {:.2} WER {:.2} SSIM {:.4} PSNR {:.2} FID {:.4}",
        r.split, r.n_samples, r.bleu1, r.bleu4, r.rouge, r.wer, r.ssim, r.psnr, r.fid_proxy
    )
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

/// Generate one corpus and write it as train/dev/test splits under `out`:
/// `tensors/<split>/<id>.<tag>.stns` files, one `<split>.jsonl` manifest per
/// non-empty split, and `vocab.json`.  All splits share the same gloss
/// inventory and motion primitives (one generation pass is partitioned), so
/// held-out samples are unseen token sequences, not unseen motions.
pub fn prepare_corpus(
    out: &Path,
    train: usize,
    dev: usize,
    test: usize,
    seed: u64,
    noise: f64,
    vocab_size: usize,
) -> Result<()> {
    if train == 0 {
        return Err(Error::InvalidConfig(
            "--samples must be at least 1".into(),
        ));
    }
    let toy = ToyConfig {
        vocab_size,
        noise_pose: noise,
        noise_hamer: noise,
        noise_smplerx: noise,
        ..ToyConfig::default()
    };
    let all = generate_toy_corpus(train + dev + test, seed, &toy)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_vocab(out, &Vocabulary::from_corpus_tokens(toy_vocabulary(vocab_size)))?;
    let mut offset = 0usize;
    for (split, count) in [(Split::Train, train), (Split::Dev, dev), (Split::Test, test)] {
        let chunk = &all[offset..offset + count];
        offset += count;
        if !chunk.is_empty() {
            write_split_files(out, split, chunk)?;
        }
    }
    Ok(())
}

fn write_split_files(out: &Path, split: Split, samples: &[SampleRecord]) -> Result<()> {
    let tensor_dir = out.join("tensors").join(split.tag());
    std::fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut paths = [const { String::new() }; 3];
        for (k, modality) in Modality::ALL.into_iter().enumerate() {
            let rel = tensor_rel_path(split.tag(), &sample.id, modality);
            write_modality_file(&out.join(&rel), sample.stream(modality))?;
            paths[k] = rel.to_string_lossy().into_owned();
        }
        let [pose_path, hamer_path, smplerx_path] = paths;
        entries.push(ManifestEntry {
            id: sample.id.clone(),
            gloss: sample.gloss_text.clone(),
            pose_path,
            hamer_path,
            smplerx_path,
        });
    }
    write_manifest(out, &DatasetManifest { split, entries })?;
    Ok(())
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    prepare_corpus(
        &args.out,
        args.samples,
        args.dev_samples,
        args.test_samples,
        args.seed,
        args.noise,
        args.vocab_size,
    )?;
    println!(
        "prepared {} train, {} dev, {} test samples -> {}",
        args.samples,
        args.dev_samples,
        args.test_samples,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if args.no_cogen {
        cfg.cogen = false;
    }
    if args.no_occ {
        cfg.occ = false;
    }
    let vocab = read_vocab(&args.data)?;
    let samples = load_split(&args.data, Split::Train, &vocab)?;
    match args.model {
        ModelKind::Generator => {
            let outcome = train_generator(&samples, &vocab, &cfg, Some(&args.out))?;
            match outcome.final_omc {
                Some(omc) => println!(
                    "trained generator for {} steps on {} samples: reconstruction loss {:.6}, correction loss {:.6}",
                    cfg.steps,
                    samples.len(),
                    outcome.final_tmc,
                    omc
                ),
                None => println!(
                    "trained generator for {} steps on {} samples: reconstruction loss {:.6}",
                    cfg.steps,
                    samples.len(),
                    outcome.final_tmc
                ),
            }
            println!("checkpoint -> {}", args.out.join("model.ckpt").display());
        }
        ModelKind::Recognizer => {
            let outcome = train_recognizer(&samples, &vocab, &cfg, Some(&args.out))?;
            println!(
                "trained recognizer for {} steps on {} samples: loss {:.6}",
                cfg.recognizer_steps,
                samples.len(),
                outcome.final_loss
            );
            println!(
                "checkpoint -> {}",
                args.out.join("recognizer.ckpt").display()
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

/// Apply the correction stage to a generated triple (each stream corrected
/// from the raw triple, mirroring training) and clamp into physical bounds.
fn correct_triple(
    gen: &CoGenOutput<f32>,
    params: &ParamStore<f32>,
    cfg: &RunConfig,
) -> Result<(Array2<f32>, Array2<f32>, Array2<f32>)> {
    let mut pose = cross_correct(
        &gen.pose.frames,
        &gen.hamer.frames,
        &gen.smplerx.frames,
        params,
        cfg,
        Modality::Pose,
    )?;
    let mut hamer = cross_correct(
        &gen.hamer.frames,
        &gen.pose.frames,
        &gen.smplerx.frames,
        params,
        cfg,
        Modality::Hamer,
    )?;
    let mut smplerx = cross_correct(
        &gen.smplerx.frames,
        &gen.pose.frames,
        &gen.hamer.frames,
        params,
        cfg,
        Modality::Smplerx,
    )?;
    clamp_to_bounds(&mut pose, Modality::Pose);
    clamp_to_bounds(&mut hamer, Modality::Hamer);
    clamp_to_bounds(&mut smplerx, Modality::Smplerx);
    Ok((pose, hamer, smplerx))
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    require_kind(&ckpt, CheckpointKind::Generator, &args.checkpoint)?;
    let ids = ckpt.vocab.encode(&args.text)?;
    let params = ckpt.params_as::<f32>();
    let cfg = &ckpt.config;
    let gen = autoregressive_generate(&ids, &params, cfg, cfg.m_max)?;
    let (pose, hamer, smplerx) = correct_triple(&gen, &params, cfg)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    // Uncorrected copies (`<tag>.raw.stns`) next to the corrected outputs.
    for (modality, raw, corrected) in [
        (Modality::Pose, &gen.pose.frames, &pose),
        (Modality::Hamer, &gen.hamer.frames, &hamer),
        (Modality::Smplerx, &gen.smplerx.frames, &smplerx),
    ] {
        let tag = modality.tag();
        write_modality_file(
            &args.out.join(format!("{tag}.raw.stns")),
            &ModalitySequence::with_end_marker(modality, raw.clone())?,
        )?;
        write_modality_file(
            &args.out.join(format!("{tag}.stns")),
            &ModalitySequence::with_end_marker(modality, corrected.clone())?,
        )?;
    }
    println!(
        "generated {} frames for {} tokens -> {}",
        gen.frame_count(),
        ids.len(),
        args.out.display()
    );
    if args.render {
        let frames = synthesize(&pose, &hamer, &smplerx, &args.synthesizer)?;
        let dir = args.out.join("frames");
        save_frames(&dir, &frames, DEFAULT_FPS)?;
        println!("rendered {} frames -> {}", frames.len(), dir.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct SampleEval {
    hyp: Vec<usize>,
    reference: Vec<usize>,
    ssim_sum: f64,
    psnr_sum: f64,
    paired: usize,
    cand_features: Array2<f64>,
    ref_features: Array2<f64>,
}

fn evaluate_sample(
    sample: &SampleRecord,
    gen_params: &ParamStore<f32>,
    gen_cfg: &RunConfig,
    recognizer: Option<(&ParamStore<f32>, &RunConfig)>,
    identity: bool,
) -> Result<SampleEval> {
    let reference = sample.gloss.ids.clone();
    let gt_pose = sample.pose.frames_as::<f32>();
    let gt_hamer = sample.hamer.frames_as::<f32>();
    let gt_smplerx = sample.smplerx.frames_as::<f32>();
    let (pose, hamer, smplerx, hyp) = if identity {
        (
            gt_pose.clone(),
            gt_hamer.clone(),
            gt_smplerx.clone(),
            reference.clone(),
        )
    } else {
        let (rec_params, rec_cfg) = recognizer.ok_or_else(|| {
            Error::InvalidConfig("a recognizer checkpoint is required unless --identity is set".into())
        })?;
        let gen = autoregressive_generate(&reference, gen_params, gen_cfg, gen_cfg.m_max)?;
        let (p, h, s) = correct_triple(&gen, gen_params, gen_cfg)?;
        let hyp = backtranslate(
            &FrameTriple {
                pose: &p,
                hamer: &h,
                smplerx: &s,
            },
            rec_params,
            rec_cfg,
        )?;
        (p, h, s, hyp)
    };
    let cand = synthesize(&pose, &hamer, &smplerx, DEFAULT_SYNTHESIZER)?;
    let gt = synthesize(&gt_pose, &gt_hamer, &gt_smplerx, DEFAULT_SYNTHESIZER)?;
    let paired = cand.len().min(gt.len());
    let mut ssim_sum = 0.0;
    let mut psnr_sum = 0.0;
    for i in 0..paired {
        ssim_sum += ssim(&cand[i], &gt[i])?;
        psnr_sum += psnr(&cand[i], &gt[i])?;
    }
    Ok(SampleEval {
        hyp,
        reference,
        ssim_sum,
        psnr_sum,
        paired,
        cand_features: frame_features(&cand),
        ref_features: frame_features(&gt),
    })
}

/// Score one split: generate + correct + back-translate per sample (or take
/// the references themselves with `identity`), then aggregate text metrics
/// over hypothesis/reference token pairs and image metrics over rendered
/// frames (candidate frames paired index-wise with reference frames up to the
/// shorter length; distribution distance over all frames of each side).
///
/// Samples are distributed over `threads` workers; results are folded in
/// sample order, so the report does not depend on the worker count.
pub fn evaluate_split(
    samples: &[SampleRecord],
    generator: &Checkpoint,
    recognizer: Option<&Checkpoint>,
    split_tag: &str,
    identity: bool,
    threads: usize,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !identity && recognizer.is_none() {
        return Err(Error::InvalidConfig(
            "a recognizer checkpoint is required unless --identity is set".into(),
        ));
    }
    let gen_params = generator.params_as::<f32>();
    let rec_params = recognizer.map(|c| c.params_as::<f32>());
    let threads = threads.clamp(1, samples.len());
    let chunk = samples.len().div_ceil(threads);
    let mut slots: Vec<Option<Result<SampleEval>>> = Vec::new();
    slots.resize_with(samples.len(), || None);
    std::thread::scope(|scope| {
        for (s_chunk, r_chunk) in samples.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let gen_params = &gen_params;
            let rec = rec_params
                .as_ref()
                .zip(recognizer)
                .map(|(p, c)| (p, &c.config));
            scope.spawn(move || {
                for (sample, slot) in s_chunk.iter().zip(r_chunk.iter_mut()) {
                    *slot = Some(evaluate_sample(
                        sample,
                        gen_params,
                        &generator.config,
                        rec,
                        identity,
                    ));
                }
            });
        }
    });
    let mut pairs = Vec::with_capacity(samples.len());
    let mut ssim_sum = 0.0;
    let mut psnr_sum = 0.0;
    let mut paired = 0usize;
    let mut cand_features = Vec::with_capacity(samples.len());
    let mut ref_features = Vec::with_capacity(samples.len());
    for slot in slots {
        let eval = slot.expect("every sample scored")?;
        pairs.push((eval.hyp, eval.reference));
        ssim_sum += eval.ssim_sum;
        psnr_sum += eval.psnr_sum;
        paired += eval.paired;
        cand_features.push(eval.cand_features);
        ref_features.push(eval.ref_features);
    }
    let text = score_text(&pairs)?;
    let cand_views: Vec<_> = cand_features.iter().map(|a| a.view()).collect();
    let ref_views: Vec<_> = ref_features.iter().map(|a| a.view()).collect();
    let cand = ndarray::concatenate(Axis(0), &cand_views)
        .map_err(|e| Error::InvalidConfig(format!("feature stacking failed: {e}")))?;
    let refs = ndarray::concatenate(Axis(0), &ref_views)
        .map_err(|e| Error::InvalidConfig(format!("feature stacking failed: {e}")))?;
    let image = ImageScore {
        ssim: ssim_sum / paired as f64,
        psnr: psnr_sum / paired as f64,
        fid: fid_proxy(&cand, &refs)?,
    };
    Ok(MetricsReport::new(
        split_tag,
        samples.len(),
        text,
        image,
        generator.config.hash(),
    ))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let generator = load_checkpoint(&args.checkpoint)?;
    require_kind(&generator, CheckpointKind::Generator, &args.checkpoint)?;
    let recognizer = match &args.recognizer {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            require_kind(&ckpt, CheckpointKind::Recognizer, path)?;
            if ckpt.vocab.corpus_tokens() != generator.vocab.corpus_tokens() {
                return Err(Error::BadCheckpoint {
                    path: path.clone(),
                    reason: "recognizer vocabulary differs from the generator vocabulary".into(),
                });
            }
            Some(ckpt)
        }
        None => None,
    };
    let samples = load_split(&args.data, args.split, &generator.vocab)?;
    let report = evaluate_split(
        &samples,
        &generator,
        recognizer.as_ref(),
        args.split.tag(),
        args.identity,
        thread_cap(),
    )?;
    write_report(&args.out, &report)?;
    println!("{}", summary_line(&report));
    println!("report -> {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// One trained and scored cell of the ablation grid.
#[derive(Debug, Serialize, Deserialize)]
pub struct AblationCell {
    pub cogen: bool,
    pub occ: bool,
    pub final_tmc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_omc: Option<f64>,
    pub report: MetricsReport,
}

/// Combined ablation output: the four cells plus the held-out correction
/// benefit probe.
#[derive(Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub n_train: usize,
    pub n_holdout: usize,
    pub noise: f64,
    /// Fraction of held-out samples whose teacher-forced skeleton error does
    /// not increase under correction.
    pub occ_pose_improvement_fraction: f64,
    pub full: AblationCell,
    pub no_cogen: AblationCell,
    pub no_occ: AblationCell,
    pub baseline: AblationCell,
}

fn mse_f64(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            "mean squared error operands",
            format!("{:?}", a.dim()),
            format!("{:?}", b.dim()),
        ));
    }
    let n = a.len().max(1);
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / n as f64)
}

/// Fraction of samples where the corrected teacher-forced skeleton stream is
/// at least as close to ground truth (mean squared error) as the uncorrected
/// one.
pub fn occ_improvement_fraction(samples: &[SampleRecord], generator: &Checkpoint) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let params = generator.params_as::<f32>();
    let cfg = &generator.config;
    let mut improved = 0usize;
    for sample in samples {
        let text = encode_gloss(&sample.gloss.ids, &params, cfg)?;
        let tf = teacher_forced_decode(sample, &text, &params, cfg)?;
        let corrected = cross_correct(
            &tf.pose.frames,
            &tf.hamer.frames,
            &tf.smplerx.frames,
            &params,
            cfg,
            Modality::Pose,
        )?;
        let gt = sample.pose.frames_as::<f32>();
        if mse_f64(&corrected, &gt)? <= mse_f64(&tf.pose.frames, &gt)? {
            improved += 1;
        }
    }
    Ok(improved as f64 / samples.len() as f64)
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base = load_config(args.config.as_deref(), &args.overrides)?;
    if args.holdout == 0 {
        return Err(Error::InvalidConfig("--holdout must be at least 1".into()));
    }
    let data = args.out.join("data");
    prepare_corpus(
        &data,
        args.samples,
        args.holdout,
        0,
        args.seed,
        args.noise,
        args.vocab_size,
    )?;
    let vocab = read_vocab(&data)?;
    let train = load_split(&data, Split::Train, &vocab)?;
    let holdout = load_split(&data, Split::Dev, &vocab)?;
    println!(
        "ablation corpus: {} train / {} held-out samples, noise {}",
        train.len(),
        holdout.len(),
        args.noise
    );
    // One recognizer, shared by all four cells so the text scores differ only
    // through the generators.
    let rec = train_recognizer(&train, &vocab, &base, Some(&args.out.join("recognizer")))?;
    println!(
        "shared recognizer: {} steps, final loss {:.6}",
        base.recognizer_steps, rec.final_loss
    );
    let threads = thread_cap();
    let mut cells = Vec::with_capacity(4);
    let mut full_ckpt: Option<Checkpoint> = None;
    for (name, cogen, occ) in [
        ("full", true, true),
        ("no_cogen", false, true),
        ("no_occ", true, false),
        ("baseline", false, false),
    ] {
        let mut cfg = base.clone();
        cfg.cogen = cogen;
        cfg.occ = occ;
        let dir = args.out.join("cells").join(name);
        let outcome = train_generator(&train, &vocab, &cfg, Some(&dir))?;
        let report = evaluate_split(
            &holdout,
            &outcome.checkpoint,
            Some(&rec.checkpoint),
            "dev",
            false,
            threads,
        )?;
        write_report(&dir.join("report.json"), &report)?;
        println!(
            "cell {name}: BLEU-1 {:.2}, WER {:.2}, SSIM {:.4}",
            report.bleu1, report.wer, report.ssim
        );
        if cogen && occ {
            full_ckpt = Some(outcome.checkpoint.clone());
        }
        cells.push(AblationCell {
            cogen,
            occ,
            final_tmc: outcome.final_tmc,
            final_omc: outcome.final_omc,
            report,
        });
    }
    let full_ckpt = full_ckpt.expect("grid contains the full cell");
    let fraction = occ_improvement_fraction(&holdout, &full_ckpt)?;
    println!(
        "correction benefit: skeleton error not increased on {:.1}% of held-out samples",
        fraction * 100.0
    );
    let [full, no_cogen, no_occ, baseline] =
        <[AblationCell; 4]>::try_from(cells).expect("four cells");
    let report = AblationReport {
        n_train: train.len(),
        n_holdout: holdout.len(),
        noise: args.noise,
        occ_pose_improvement_fraction: fraction,
        full,
        no_cogen,
        no_occ,
        baseline,
    };
    let path = args.out.join("ablation.json");
    write_report(&path, &report)?;
    println!("combined report -> {}", path.display());
    Ok(())
}
