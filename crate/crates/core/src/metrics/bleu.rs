//! Sentence and corpus BLEU over token sequences.
//!
//! Both levels use an effective order `N' = min(max_n, |cand|, |ref|)` (for
//! a corpus, the longest candidate and reference), so sequences shorter than
//! `max_n` are scored on the n-gram orders they can actually contain.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const BLEU_MAX_N: usize = 4;

/// Added to zero clipped counts in sentence BLEU.
pub const SMOOTHING_EPSILON: f64 = 1e-9;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// `(clipped matches, candidate n-gram count)` for order `n`.
pub fn modified_precision<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let clipped = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (clipped, (candidate.len() + 1).saturating_sub(n.max(1)))
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    (1.0 - ref_len as f64 / cand_len as f64).exp().min(1.0)
}

/// Smoothed sentence BLEU in `[0, 1]`. Empty candidate or reference scores 0.
pub fn bleu_sentence<T: Eq + Hash>(candidate: &[T], reference: &[T], max_n: usize) -> f64 {
    let order = max_n.min(candidate.len()).min(reference.len());
    if order == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=order {
        let (clipped, total) = modified_precision(candidate, reference, n);
        let num = if clipped == 0 { SMOOTHING_EPSILON } else { clipped as f64 };
        log_sum += (num / total as f64).ln();
    }
    let score = brevity_penalty(candidate.len(), reference.len()) * (log_sum / order as f64).exp();
    score.clamp(0.0, 1.0)
}

/// Unsmoothed corpus BLEU on the 0-100 scale: clipped counts and lengths are
/// summed over all pairs before the geometric mean.
pub fn bleu_corpus<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "bleu_corpus: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("bleu_corpus: empty corpus"));
    }
    let longest = |v: &[Vec<T>]| v.iter().map(Vec::len).max().unwrap_or(0);
    let order = max_n.min(longest(candidates)).min(longest(references));
    if order == 0 {
        return Ok(0.0);
    }
    let mut clipped = vec![0usize; order];
    let mut totals = vec![0usize; order];
    for (c, r) in candidates.iter().zip(references) {
        for n in 1..=order {
            let (k, t) = modified_precision(c, r, n);
            clipped[n - 1] += k;
            totals[n - 1] += t;
        }
    }
    if clipped.iter().any(|&k| k == 0) {
        return Ok(0.0);
    }
    let log_sum: f64 = clipped
        .iter()
        .zip(&totals)
        .map(|(&k, &t)| (k as f64 / t as f64).ln())
        .sum();
    let cand_len: usize = candidates.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    let score = brevity_penalty(cand_len, ref_len) * (log_sum / order as f64).exp();
    Ok(100.0 * score.clamp(0.0, 1.0))
}
