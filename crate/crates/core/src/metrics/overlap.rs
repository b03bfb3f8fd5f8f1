//! Token-overlap response metrics. Every string is passed through
//! [`tokenize`] first.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::text::{ngrams, tokenize, NGram};

fn counts<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap<T: std::hash::Hash + Eq>(hyp: &HashMap<T, usize>, reference: &HashMap<T, usize>) -> usize {
    hyp.iter()
        .map(|(w, &c)| c.min(reference.get(w).copied().unwrap_or(0)))
        .sum()
}

fn f1_from(overlap: usize, hyp_len: usize, ref_len: usize) -> f64 {
    match (hyp_len, ref_len) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ if overlap == 0 => 0.0,
        _ => {
            let p = overlap as f64 / hyp_len as f64;
            let r = overlap as f64 / ref_len as f64;
            2.0 * p * r / (p + r)
        }
    }
}

pub fn unigram_f1(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (tokenize(hyp), tokenize(reference));
    let overlap = clipped_overlap(&counts(h.iter()), &counts(r.iter()));
    f1_from(overlap, h.len(), r.len())
}

/// Distinct n-grams over total n-grams, pooled across all responses.
pub fn distinct_n<S: AsRef<str>>(responses: &[S], n: usize) -> Result<f64> {
    let mut seen: HashSet<NGram> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        let grams = ngrams(tokenize(r.as_ref()).tokens(), n)?;
        total += grams.len();
        seen.extend(grams);
    }
    Ok(if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    })
}

/// Clipped matches and totals of n-grams for n = 1..=4.
fn ngram_stats(hyp: &[String], reference: &[String]) -> [(usize, usize); 4] {
    let mut out = [(0, 0); 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        let h = ngrams(hyp, n).expect("n >= 1");
        let r = ngrams(reference, n).expect("n >= 1");
        *slot = (clipped_overlap(&counts(h.iter()), &counts(r.iter())), h.len());
    }
    out
}

fn check_pairs<A, B>(hyps: &[A], refs: &[B]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::InvalidParameter("BLEU needs at least one pair".into()));
    }
    Ok(())
}

/// Corpus BLEU-4: pooled clipped precisions, uniform geometric mean, brevity
/// penalty, no smoothing.
pub fn bleu4<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let mut pooled = [(0usize, 0usize); 4];
    let (mut h_len, mut r_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (tokenize(h.as_ref()), tokenize(r.as_ref()));
        h_len += h.len();
        r_len += r.len();
        for (acc, (m, t)) in pooled.iter_mut().zip(ngram_stats(h.tokens(), r.tokens())) {
            acc.0 += m;
            acc.1 += t;
        }
    }
    if pooled.iter().any(|&(m, _)| m == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = pooled.iter().map(|&(m, t)| (m as f64 / t as f64).ln()).sum::<f64>() / 4.0;
    Ok(brevity_penalty(h_len, r_len) * log_p.exp())
}

fn brevity_penalty(h_len: usize, r_len: usize) -> f64 {
    if h_len >= r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / h_len as f64).exp()
    }
}

/// Sentence BLEU-4 with add-one smoothing on every precision. For per-turn
/// diagnostics only; not comparable to [`bleu4`].
pub fn sentence_bleu4_smoothed(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (tokenize(hyp), tokenize(reference));
    if h.is_empty() {
        return 0.0;
    }
    let log_p: f64 = ngram_stats(h.tokens(), r.tokens())
        .iter()
        .map(|&(m, t)| ((m + 1) as f64 / (t + 1) as f64).ln())
        .sum::<f64>()
        / 4.0;
    brevity_penalty(h.len(), r.len()) * log_p.exp()
}

pub(crate) fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
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

/// ROUGE-L as the balanced F1 of LCS precision and recall.
pub fn rouge_l(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (tokenize(hyp), tokenize(reference));
    f1_from(lcs_len(h.tokens(), r.tokens()), h.len(), r.len())
}
