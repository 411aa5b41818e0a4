//! Corpus BLEU, ROUGE-L and retrieval recall@k.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::Array;

/// Added to zero n-gram match counts before taking logs.
pub const BLEU_EPSILON: f64 = 0.1;

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-`max_n` in `[0, 100]` with uniform weights. A corpus
/// with no hypothesis n-grams of some order scores 0.
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<f64> {
    if hyps.is_empty() || hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "bleu needs matching non-empty corpora, got {} hypotheses and {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if !(1..=4).contains(&max_n) {
        return Err(Error::InvalidArgument(format!("bleu order {max_n} outside 1..=4")));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        if totals[n] == 0 {
            return Ok(0.0);
        }
        let num = if matches[n] == 0 { BLEU_EPSILON } else { matches[n] as f64 };
        log_sum += (num / totals[n] as f64).ln();
    }
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0);
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(hyp: &[String], reference: &[String]) -> Result<f64> {
    if hyp.is_empty() || reference.is_empty() {
        return Err(Error::InvalidArgument("rouge_l needs non-empty token lists".into()));
    }
    let l = lcs_len(hyp, reference) as f64;
    if l == 0.0 {
        return Ok(0.0);
    }
    let (p, r) = (l / hyp.len() as f64, l / reference.len() as f64);
    Ok(2.0 * p * r / (p + r))
}

/// Mean sentence ROUGE-L; an empty hypothesis scores 0.
pub fn corpus_rouge_l(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    if hyps.is_empty() || hyps.len() != refs.len() {
        return Err(Error::InvalidArgument("rouge_l needs matching non-empty corpora".into()));
    }
    let mut sum = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        sum += if h.is_empty() { 0.0 } else { rouge_l(h, r)? };
    }
    Ok(sum / hyps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub video_to_text: f64,
    pub text_to_video: f64,
}

/// Rank of `target` among `scores`, counting earlier indices first on ties.
fn rank_of(scores: impl Iterator<Item = f64> + Clone, target: usize) -> usize {
    let t = scores.clone().nth(target).expect("target in range");
    scores
        .enumerate()
        .filter(|&(j, s)| s > t || (s == t && j < target))
        .count()
}

/// Rows are videos, columns texts; the true match of row `i` is column `i`.
pub fn recall_at_k(m: &Array, k: usize) -> Result<Recall> {
    let n = match m.shape() {
        &[r, c] if r == c && r > 0 => r,
        s => return Err(Error::shape("recall_at_k", s, &[s[0], s[0]])),
    };
    if k < 1 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={n}")));
    }
    let mut v2t = 0;
    let mut t2v = 0;
    for i in 0..n {
        v2t += usize::from(rank_of(m.row(i).iter().copied(), i) < k);
        t2v += usize::from(rank_of((0..n).map(|r| m.get2(r, i)), i) < k);
    }
    Ok(Recall {
        video_to_text: v2t as f64 / n as f64,
        text_to_video: t2v as f64 / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// BLEU-1 through BLEU-4.
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub samples: usize,
}

pub fn evaluate_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<EvalReport> {
    let mut b = [0.0; 4];
    for (n, slot) in b.iter_mut().enumerate() {
        *slot = bleu(hyps, refs, n + 1)?;
    }
    Ok(EvalReport {
        bleu: b,
        rouge_l: corpus_rouge_l(hyps, refs)?,
        samples: hyps.len(),
    })
}

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
