//! Token-sequence metrics: BLEU-1..4 with brevity penalty, longest-common-
//! subsequence F1, and edit-distance word error rate.  All scores are on a
//! 0-100 scale; error rate may exceed 100 when the hypothesis is much longer
//! than the reference.
//!
//! Corpus variants aggregate the standard way: BLEU pools n-gram counts and
//! lengths before the geometric mean, error rate pools edit distances over
//! pooled reference length, and the subsequence F1 is averaged per pair.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Added to zero n-gram precisions so short sequences never zero out the
/// whole geometric mean; documented for bit-for-bit reproducibility.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Largest supported n-gram order.
pub const BLEU_MAX_N: usize = 4;

fn check_max_n(max_n: usize) -> Result<()> {
    if !(1..=BLEU_MAX_N).contains(&max_n) {
        return Err(Error::InvalidConfig(format!(
            "bleu max_n must be in 1..={BLEU_MAX_N}, got {max_n}"
        )));
    }
    Ok(())
}

/// Clipped n-gram matches and hypothesis n-gram total for one order.
fn ngram_stats<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
    for w in reference.windows(n) {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut hyp_counts: HashMap<&[T], usize> = HashMap::new();
    for w in hyp.windows(n) {
        *hyp_counts.entry(w).or_insert(0) += 1;
    }
    let clipped = hyp_counts
        .iter()
        .map(|(w, &c)| c.min(ref_counts.get(w).copied().unwrap_or(0)))
        .sum();
    (clipped, hyp.len() - n + 1)
}

/// Running totals for corpus-level BLEU.
#[derive(Debug, Clone, Default)]
struct BleuTotals {
    clipped: [usize; BLEU_MAX_N],
    candidates: [usize; BLEU_MAX_N],
    hyp_len: usize,
    ref_len: usize,
}

impl BleuTotals {
    fn add<T: Eq + Hash>(&mut self, hyp: &[T], reference: &[T], max_n: usize) -> Result<()> {
        if reference.is_empty() {
            return Err(Error::InvalidConfig("bleu reference must be non-empty".into()));
        }
        for n in 1..=max_n {
            let (c, t) = ngram_stats(hyp, reference, n);
            self.clipped[n - 1] += c;
            self.candidates[n - 1] += t;
        }
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        Ok(())
    }

    fn score(&self, max_n: usize) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        // Orders where the hypotheses have no candidate n-grams at all (0/0)
        // are excluded from the mean, so a short perfect match still scores
        // 100; a computed zero precision (0 of > 0) gets the epsilon.
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        for n in 1..=max_n {
            let (c, t) = (self.clipped[n - 1], self.candidates[n - 1]);
            if t == 0 {
                continue;
            }
            let p = if c == 0 {
                BLEU_EPSILON
            } else {
                c as f64 / t as f64
            };
            log_sum += p.ln();
            orders += 1;
        }
        if orders == 0 {
            return 0.0;
        }
        let precision = (log_sum / orders as f64).exp();
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        100.0 * bp * precision
    }
}

/// BLEU for one hypothesis/reference pair (a corpus of one).
pub fn bleu<T: Eq + Hash>(hyp: &[T], reference: &[T], max_n: usize) -> Result<f64> {
    check_max_n(max_n)?;
    let mut totals = BleuTotals::default();
    totals.add(hyp, reference, max_n)?;
    Ok(totals.score(max_n))
}

/// Corpus BLEU: n-gram counts and lengths pooled over all pairs before the
/// geometric mean and brevity penalty.
pub fn corpus_bleu<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)], max_n: usize) -> Result<f64> {
    check_max_n(max_n)?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut totals = BleuTotals::default();
    for (hyp, reference) in pairs {
        totals.add(hyp, reference, max_n)?;
    }
    Ok(totals.score(max_n))
}

/// Longest-common-subsequence length (classic quadratic dynamic program).
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Subsequence-overlap F1 (balanced precision/recall) for one pair, 0-100.
pub fn rouge<T: Eq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidConfig("rouge reference must be non-empty".into()));
    }
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let lcs = lcs_len(hyp, reference) as f64;
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * p * r / (p + r))
}

/// Mean per-pair subsequence F1 over a corpus.
pub fn corpus_rouge<T: Eq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = 0.0;
    for (hyp, reference) in pairs {
        sum += rouge(hyp, reference)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Minimum edit distance (substitution, insertion, deletion all cost 1).
pub fn levenshtein<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word error rate for one pair: edit distance over reference length, 0-100+
/// (can exceed 100 for hypotheses much longer than the reference).
pub fn wer<T: Eq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidConfig("wer reference must be non-empty".into()));
    }
    Ok(100.0 * levenshtein(hyp, reference) as f64 / reference.len() as f64)
}

/// Pooled word error rate: total edit distance over total reference length.
pub fn corpus_wer<T: Eq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut distance = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in pairs {
        if reference.is_empty() {
            return Err(Error::InvalidConfig("wer reference must be non-empty".into()));
        }
        distance += levenshtein(hyp, reference);
        ref_len += reference.len();
    }
    Ok(100.0 * distance as f64 / ref_len as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_perfect_match_is_100_for_every_order() {
        let t = toks("a b c d e");
        for n in 1..=4 {
            assert!((bleu(&t, &t, n).unwrap() - 100.0).abs() < 1e-9, "order {n}");
        }
        // Perfect matches shorter than the order still score 100: orders
        // with no candidate n-grams drop out instead of being smoothed.
        let short = toks("a b");
        assert!((bleu(&short, &short, 4).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_empty_hypothesis_is_zero_and_empty_reference_errors() {
        let r = toks("a b c");
        assert_eq!(bleu::<&str>(&[], &r, 4).unwrap(), 0.0);
        assert!(bleu::<&str>(&r, &[], 4).is_err());
        assert!(bleu(&r, &r, 0).is_err());
        assert!(bleu(&r, &r, 5).is_err());
    }

    #[test]
    fn bleu_brevity_penalty_hand_case() {
        // Unigram precision 1, hypothesis 3 vs reference 4 tokens:
        // exp(1 - 4/3) * 100 = 71.653...
        let got = bleu(&toks("the cat sat"), &toks("the cat sat down"), 1).unwrap();
        let want = 100.0 * (1.0f64 - 4.0 / 3.0).exp();
        assert!((got - want).abs() < 1e-9);
        assert!((got - 71.653).abs() < 1e-3);
    }

    #[test]
    fn corpus_bleu_pools_counts_not_scores() {
        // Pair 1 perfect, pair 2 a miss; pooling differs from averaging the
        // two standalone scores.
        let pairs = vec![
            (toks("a b"), toks("a b")),
            (toks("a x"), toks("a b")),
        ];
        let pooled = corpus_bleu(&pairs, 1).unwrap();
        assert!((pooled - 75.0).abs() < 1e-9, "3 of 4 unigrams match: {pooled}");
        let avg = (bleu(&pairs[0].0, &pairs[0].1, 1).unwrap()
            + bleu(&pairs[1].0, &pairs[1].1, 1).unwrap())
            / 2.0;
        assert!((pooled - avg).abs() < 1e-9, "equal lengths make them agree here");
    }

    #[test]
    fn bleu_clips_repeated_ngrams() {
        // "a a a a" vs "a": clipped unigram count is 1, not 4.
        let got = bleu(&toks("a a a a"), &toks("a"), 1).unwrap();
        assert!((got - 25.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn rouge_hand_cases() {
        let t = toks("a b c");
        assert!((rouge(&t, &t).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(rouge(&toks("x y"), &toks("a b")).unwrap(), 0.0);
        // LCS("a b c d", "a c d") = 3; P = 3/4, R = 1 -> F1 = 6/7.
        let got = rouge(&toks("a b c d"), &toks("a c d")).unwrap();
        assert!((got - 600.0 / 7.0).abs() < 1e-9);
        assert!((got - 85.714).abs() < 1e-3);
        assert!(rouge::<&str>(&t, &[]).is_err());
    }

    #[test]
    fn wer_hand_cases() {
        let r = toks("a b c");
        assert_eq!(wer(&r, &r).unwrap(), 0.0);
        let got = wer(&toks("a x c"), &r).unwrap();
        assert!((got - 100.0 / 3.0).abs() < 1e-9);
        assert!((got - 33.333).abs() < 1e-3);
        assert_eq!(wer::<&str>(&[], &r).unwrap(), 100.0);
        // Longer hypothesis than reference can exceed 100.
        assert!(wer(&toks("x y z w v"), &toks("a")).unwrap() > 100.0);
        assert!(wer::<&str>(&r, &[]).is_err());
    }

    #[test]
    fn corpus_wer_pools_distances() {
        let pairs = vec![
            (toks("a b c"), toks("a b c")), // 0 edits / 3
            (toks("x"), toks("a b c")),     // 3 edits / 3
        ];
        let got = corpus_wer(&pairs).unwrap();
        assert!((got - 50.0).abs() < 1e-9);
    }

    #[test]
    fn empty_corpora_are_rejected() {
        let empty: Vec<(Vec<&str>, Vec<&str>)> = Vec::new();
        assert!(corpus_bleu(&empty, 4).is_err());
        assert!(corpus_rouge(&empty).is_err());
        assert!(corpus_wer(&empty).is_err());
    }

    proptest! {
        #[test]
        fn text_metrics_are_relabeling_invariant(
            hyp in proptest::collection::vec(0usize..8, 0..12),
            rf in proptest::collection::vec(0usize..8, 1..12),
            shift in 1usize..100,
        ) {
            // A bijection on token ids (here: add a constant) must not move
            // any text score.
            let map = |v: &[usize]| v.iter().map(|&t| t + shift).collect::<Vec<_>>();
            let (h2, r2) = (map(&hyp), map(&rf));
            for n in 1..=4 {
                prop_assert!((bleu(&hyp, &rf, n).unwrap() - bleu(&h2, &r2, n).unwrap()).abs() < 1e-12);
            }
            prop_assert!((rouge(&hyp, &rf).unwrap() - rouge(&h2, &r2).unwrap()).abs() < 1e-12);
            prop_assert!((wer(&hyp, &rf).unwrap() - wer(&h2, &r2).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn edit_distance_satisfies_triangle_inequality(
            a in proptest::collection::vec(0usize..5, 0..10),
            b in proptest::collection::vec(0usize..5, 0..10),
            c in proptest::collection::vec(0usize..5, 0..10),
        ) {
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert_eq!(levenshtein(&a, &a), 0);
        }
    }
}
