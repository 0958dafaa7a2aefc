//! Evaluation measures: token-sequence scores (n-gram precision, subsequence
//! overlap, edit-distance error rate), frame-image scores (structural
//! similarity, signal-to-noise), and a documented fixed-extractor
//! distribution distance — plus the JSON report that aggregates them per
//! split.

mod fid;
mod image;
mod text;

pub use fid::{
    extract_features, fid_proxy, frame_features, COVARIANCE_EPSILON, EXTRACTOR_ID, FEATURE_DIM,
};
pub use image::{mse, psnr, ssim, to_gray, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_WINDOW};
pub use text::{
    bleu, corpus_bleu, corpus_rouge, corpus_wer, lcs_len, levenshtein, rouge, wer, BLEU_EPSILON,
    BLEU_MAX_N,
};

use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Text scores on the 0-100 scale (error rate may exceed 100).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextScore {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge: f64,
    pub wer: f64,
}

/// Frame-image scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub ssim: f64,
    pub psnr: f64,
    pub fid: f64,
}

/// All text metrics over one corpus of (hypothesis, reference) pairs.
pub fn score_text<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<TextScore> {
    Ok(TextScore {
        bleu1: corpus_bleu(pairs, 1)?,
        bleu2: corpus_bleu(pairs, 2)?,
        bleu3: corpus_bleu(pairs, 3)?,
        bleu4: corpus_bleu(pairs, 4)?,
        rouge: corpus_rouge(pairs)?,
        wer: corpus_wer(pairs)?,
    })
}

/// Per-split evaluation report, serialized as JSON by the evaluation command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub n_samples: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge: f64,
    pub wer: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub fid_proxy: f64,
    pub extractor_id: String,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn new(
        split: impl Into<String>,
        n_samples: usize,
        text: TextScore,
        image: ImageScore,
        config_hash: impl Into<String>,
    ) -> Self {
        MetricsReport {
            split: split.into(),
            n_samples,
            bleu1: text.bleu1,
            bleu2: text.bleu2,
            bleu3: text.bleu3,
            bleu4: text.bleu4,
            rouge: text.rouge,
            wer: text.wer,
            ssim: image.ssim,
            psnr: image.psnr,
            fid_proxy: image.fid,
            extractor_id: EXTRACTOR_ID.to_string(),
            config_hash: config_hash.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_text_bundles_all_measures() {
        let pairs = vec![(vec![1usize, 2, 3], vec![1usize, 2, 3])];
        let score = score_text(&pairs).unwrap();
        assert!((score.bleu1 - 100.0).abs() < 1e-9);
        assert!((score.bleu4 - 100.0).abs() < 1e-9);
        assert!((score.rouge - 100.0).abs() < 1e-9);
        assert_eq!(score.wer, 0.0);
    }

    #[test]
    fn report_serializes_with_the_contract_keys() {
        let report = MetricsReport::new(
            "dev",
            3,
            TextScore {
                bleu1: 90.0,
                bleu2: 80.0,
                bleu3: 70.0,
                bleu4: 60.0,
                rouge: 85.0,
                wer: 12.5,
            },
            ImageScore {
                ssim: 0.95,
                psnr: 31.0,
                fid: 2.5,
            },
            "abc123",
        );
        let json = serde_json::to_string(&report).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in [
            "split",
            "n_samples",
            "bleu1",
            "bleu2",
            "bleu3",
            "bleu4",
            "rouge",
            "wer",
            "ssim",
            "psnr",
            "fid_proxy",
            "extractor_id",
            "config_hash",
        ] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(value["extractor_id"], EXTRACTOR_ID);
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
