//! Word error rate and corpus BLEU.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WerScore {
    pub errors: usize,
    pub ref_len: usize,
    pub wer: f64,
    /// Set when the reference is empty; `wer` then counts insertions.
    pub empty_reference: bool,
}

pub fn wer<T: PartialEq>(hyp: &[T], reference: &[T]) -> WerScore {
    let errors = edit_distance(hyp, reference);
    WerScore {
        errors,
        ref_len: reference.len(),
        wer: errors as f64 / reference.len().max(1) as f64,
        empty_reference: reference.is_empty(),
    }
}

/// Corpus WER: total edits over total reference length.
pub fn corpus_wer<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Shape(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let (mut errors, mut total) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        errors += edit_distance(h, r);
        total += r.len();
    }
    Ok(errors as f64 / total.max(1) as f64)
}

fn ngram_counts<T: Hash + Eq + Clone>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU in `[0, 1]` over tokenised sequences.
///
/// Geometric mean of clipped n-gram precisions for `n = 1..=max_n` times the
/// brevity penalty. Precisions for `n ≥ 2` are add-one smoothed so that short
/// corpora without any 4-gram match still score above zero.
pub fn bleu<T: Hash + Eq + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::Shape("BLEU of an empty corpus".into()));
    }
    if hyps.len() != refs.len() || max_n == 0 {
        return Err(Error::Shape(format!(
            "{} hypotheses for {} references (max_n {max_n})",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matched[0] as f64 / total[0] as f64).ln();
    for n in 1..max_n {
        log_p += ((matched[n] + 1) as f64 / (total[n] + 1) as f64).ln();
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_p / max_n as f64).exp())
}

/// Direction of a task metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// Swapped-composition metric as a percentage of the reference metric.
pub fn retention_pct(reference: f64, swapped: f64, dir: Direction) -> f64 {
    match dir {
        Direction::HigherIsBetter => 100.0 * swapped / reference,
        Direction::LowerIsBetter => 100.0 * reference / swapped,
    }
}
