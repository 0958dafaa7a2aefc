//! Scratch diagnostic: decompose the training objective of a checkpoint into
//! per-modality absolute-error and continuation terms on its training set.

use signaligner::checkpoint::load_checkpoint;
use signaligner::cli::read_vocab;
use signaligner::cogen::teacher_forced_decode;
use signaligner::corpus::{load_split, Modality, SampleRecord, Split};
use signaligner::encoder::encode_gloss;


fn tail_report(samples: &[SampleRecord]) {
    for rec in samples.iter().take(3) {
        let m = rec.pose.frames.nrows();
        let last = rec.pose.frames.row(m - 1).to_owned();
        let mut line = format!(
        "tail m={m} flags[-3:]={:?} pose dist:",
        &rec.pose.continue_flags[m.saturating_sub(3)..]
    );
        for t in m.saturating_sub(4)..m {
            let d: f64 = rec
                .pose
                .frames
                .row(t)
                .iter()
                .zip(last.iter())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            line += &format!(" {d:.4}");
        }
        println!("{line}");
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = load_checkpoint(args[1].as_ref()).unwrap();
    let data = std::path::Path::new(&args[2]);
    let vocab = read_vocab(data).unwrap();
    let samples = load_split(data, Split::Train, &vocab).unwrap();
    tail_report(&samples);
    let params = ckpt.params_as::<f32>();
    let cfg = &ckpt.config;
    let mut mae = [0.0f64; 3];
    let mut bce = [0.0f64; 3];
    let mut worst = [0.0f64; 3];
    // GT dispersion per modality: mean over channels of the channel's std over
    // all frames of all samples (what a constant predictor per channel leaves).
    for (k, modality) in [Modality::Pose, Modality::Hamer, Modality::Smplerx]
        .into_iter()
        .enumerate()
    {
        let dim = samples[0].stream(modality).frames.ncols();
        let mut sum = vec![0.0f64; dim];
        let mut sumsq = vec![0.0f64; dim];
        let mut n = 0usize;
        for sample in &samples {
            let f = &sample.stream(modality).frames;
            for row in f.rows() {
                for (c, &v) in row.iter().enumerate() {
                    sum[c] += v as f64;
                    sumsq[c] += (v as f64) * (v as f64);
                }
                n += 1;
            }
        }
        let mean_std: f64 = (0..dim)
            .map(|c| {
                let m = sum[c] / n as f64;
                (sumsq[c] / n as f64 - m * m).max(0.0).sqrt()
            })
            .sum::<f64>()
            / dim as f64;
        println!(
            "{} gt mean channel std: {mean_std:.4}",
            ["pose", "hamer", "smplerx"][k]
        );
    }
    for sample in &samples {
        let text = encode_gloss(&sample.gloss.ids, &params, cfg).unwrap();
        let tf = teacher_forced_decode(sample, &text, &params, cfg).unwrap();
        for (k, modality) in [Modality::Pose, Modality::Hamer, Modality::Smplerx]
            .into_iter()
            .enumerate()
        {
            let pred = &tf.stream(modality).frames;
            let gt = sample.stream(modality).frames_as::<f32>();
            let n = pred.len() as f64;
            let err: f64 = pred
                .iter()
                .zip(gt.iter())
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .sum::<f64>()
                / n;
            mae[k] += err / samples.len() as f64;
            let w: f64 = pred
                .iter()
                .zip(gt.iter())
                .map(|(&a, &b)| (a as f64 - b as f64).abs())
                .fold(0.0, f64::max);
            worst[k] = worst[k].max(w);
            let probs = &tf.stream(modality).continue_probs;
            let flags = &sample.stream(modality).continue_flags;
            let b: f64 = probs
                .iter()
                .zip(flags.iter())
                .map(|(&p, &f)| {
                    let p = (p as f64).clamp(1e-7, 1.0 - 1e-7);
                    -(f as f64 * p.ln() + (1.0 - f as f64) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / probs.len() as f64;
            bce[k] += b / samples.len() as f64;
        }
    }
    let mut total = 0.0;
    for (k, name) in ["pose", "hamer", "smplerx"].iter().enumerate() {
        println!(
            "{name}: mae {:.4}  bce {:.4}  worst |err| {:.3}",
            mae[k], bce[k], worst[k]
        );
        total += mae[k] + 0.1 * bce[k] / 3.0;
    }
    println!("reconstructed l_tmc ~= {total:.4}");

    // Continuation loss split: frames that continue vs the final frame.
    {
        let mut cont = 0.0f64;
        let mut cont_n = 0usize;
        let mut stop = 0.0f64;
        let mut stop_n = 0usize;
        for sample in &samples {
            let text = encode_gloss(&sample.gloss.ids, &params, cfg).unwrap();
            let tf = teacher_forced_decode(sample, &text, &params, cfg).unwrap();
            for modality in [Modality::Pose, Modality::Hamer, Modality::Smplerx] {
                let probs = &tf.stream(modality).continue_probs;
                let flags = &sample.stream(modality).continue_flags;
                for (&p, &f) in probs.iter().zip(flags.iter()) {
                    let p = (p as f64).clamp(1e-7, 1.0 - 1e-7);
                    let b = -(f as f64 * p.ln() + (1.0 - f as f64) * (1.0 - p).ln());
                    if f > 0.5 {
                        cont += b;
                        cont_n += 1;
                    } else {
                        stop += b;
                        stop_n += 1;
                    }
                }
            }
        }
        println!(
            "bce continue-frames mean {:.4} ({cont_n}), stop-frame mean {:.4} ({stop_n})",
            cont / cont_n as f64,
            stop / stop_n.max(1) as f64
        );
    }

    // Pose error split by keypoint group and by frame position.
    {
        use signaligner::corpus::layout;
        let mut group_err = [0.0f64; 3];
        let mut group_n = [0usize; 3];
        let mut f0_err = 0.0f64;
        let mut f0_n = 0usize;
        let mut rest_err = 0.0f64;
        let mut rest_n = 0usize;
        for sample in &samples {
            let text = encode_gloss(&sample.gloss.ids, &params, cfg).unwrap();
            let tf = teacher_forced_decode(sample, &text, &params, cfg).unwrap();
            let pred = &tf.stream(Modality::Pose).frames;
            let gt = sample.stream(Modality::Pose).frames_as::<f32>();
            for ((r, c), &p) in pred.indexed_iter() {
                let e = (p as f64 - gt[[r, c]] as f64).abs();
                let kp = c / 2;
                let g = if layout::LEFT_HAND.contains(&kp) || layout::RIGHT_HAND.contains(&kp) {
                    0
                } else if layout::FACE.contains(&kp) {
                    1
                } else {
                    2
                };
                group_err[g] += e;
                group_n[g] += 1;
                if r == 0 {
                    f0_err += e;
                    f0_n += 1;
                } else {
                    rest_err += e;
                    rest_n += 1;
                }
            }
        }
        println!(
            "pose mae by group: hands {:.4} face {:.4} body {:.4}",
            group_err[0] / group_n[0] as f64,
            group_err[1] / group_n[1] as f64,
            group_err[2] / group_n[2] as f64
        );
        println!(
            "pose mae frame0 {:.4} frames1+ {:.4}",
            f0_err / f0_n as f64,
            rest_err / rest_n as f64
        );
    }

    // Locate the worst cells of the worst modality.
    let mut cells: Vec<(f64, usize, usize, usize, f64, f64)> = Vec::new();
    for (si, sample) in samples.iter().enumerate() {
        let text = encode_gloss(&sample.gloss.ids, &params, cfg).unwrap();
        let tf = teacher_forced_decode(sample, &text, &params, cfg).unwrap();
        for modality in [Modality::Hamer, Modality::Smplerx] {
            let pred = &tf.stream(modality).frames;
            let gt = sample.stream(modality).frames_as::<f32>();
            for ((r, c), &p) in pred.indexed_iter() {
                let g = gt[[r, c]];
                let e = (p as f64 - g as f64).abs();
                cells.push((e, si, r, c, p as f64, g as f64));
            }
        }
    }
    cells.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("worst cells (err, sample, frame, channel, pred, gt):");
    for cell in cells.iter().take(12) {
        println!(
            "  {:.3} s{} f{} c{} pred {:.3} gt {:.3}",
            cell.0, cell.1, cell.2, cell.3, cell.4, cell.5
        );
    }
    // Mean |err| by frame index for smplerx, first 8 frames.
    let mut by_frame = vec![(0.0f64, 0usize); 12];
    for (si, sample) in samples.iter().enumerate() {
        let _ = si;
        let text = encode_gloss(&sample.gloss.ids, &params, cfg).unwrap();
        let tf = teacher_forced_decode(sample, &text, &params, cfg).unwrap();
        let pred = &tf.smplerx.frames;
        let gt = sample.smplerx.frames_as::<f32>();
        for ((r, c), &p) in pred.indexed_iter() {
            if r < by_frame.len() {
                by_frame[r].0 += (p as f64 - gt[[r, c]] as f64).abs();
                by_frame[r].1 += 1;
            }
        }
    }
    println!("smplerx mean |err| by frame:");
    for (r, (s, n)) in by_frame.iter().enumerate() {
        if *n > 0 {
            println!("  frame {r}: {:.4}", s / *n as f64);
        }
    }
}
