use std::collections::HashMap;

use crate::corpus::DialogueContext;
use crate::error::{Error, Result};
use crate::selection::index::{bm25_idf, smooth_idf, TermIndex};
use crate::selection::{Ranking, ScoredCandidate};
use crate::text::{tokenize, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidParameter(format!("BM25 k1 = {} must be > 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParameter(format!("BM25 b = {} outside [0, 1]", self.b)));
        }
        Ok(())
    }
}

/// In-vocabulary query term counts.
fn query_counts(index: &TermIndex, query: &TokenSequence) -> Vec<(u32, u32)> {
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for tok in query.iter() {
        if let Some(id) = index.term_id(tok) {
            *counts.entry(id).or_default() += 1;
        }
    }
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_unstable();
    v
}

fn doc_tf(tf: &[(u32, u32)], id: u32) -> u32 {
    tf.binary_search_by_key(&id, |&(t, _)| t).map_or(0, |p| tf[p].1)
}

/// Cosine similarity of TF-IDF vectors (raw term counts, smoothed idf) of
/// the query and every indexed document.
pub fn tfidf_scores(index: &TermIndex, query: &TokenSequence) -> Vec<ScoredCandidate> {
    let n = index.n_docs();
    let q = query_counts(index, query);
    let weights: Vec<(u32, f64)> = q
        .iter()
        .map(|&(id, c)| (id, f64::from(c) * smooth_idf(n, index.df_by_id(id))))
        .collect();
    let q_norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    index
        .docs
        .iter()
        .map(|doc| {
            let score = if q_norm == 0.0 || doc.tfidf_norm == 0.0 {
                0.0
            } else {
                let dot: f64 = weights
                    .iter()
                    .map(|&(id, qw)| {
                        let dw = f64::from(doc_tf(&doc.tf, id)) * smooth_idf(n, index.df_by_id(id));
                        qw * dw
                    })
                    .sum();
                dot / (q_norm * doc.tfidf_norm)
            };
            ScoredCandidate {
                key: doc.key.clone(),
                score,
            }
        })
        .collect()
}

/// Okapi BM25 of the query against every indexed document. Repeated query
/// terms count once per occurrence.
pub fn bm25_scores(index: &TermIndex, query: &TokenSequence, params: Bm25Params) -> Result<Vec<ScoredCandidate>> {
    params.validate()?;
    let Bm25Params { k1, b } = params;
    let n = index.n_docs();
    let avg = index.avg_len();
    let q = query_counts(index, query);
    Ok(index
        .docs
        .iter()
        .map(|doc| {
            let norm = k1 * (1.0 - b + b * doc.len as f64 / avg);
            let score = q
                .iter()
                .map(|&(id, qf)| {
                    let tf = f64::from(doc_tf(&doc.tf, id));
                    if tf == 0.0 {
                        return 0.0;
                    }
                    f64::from(qf) * bm25_idf(n, index.df_by_id(id)) * tf * (k1 + 1.0) / (tf + norm)
                })
                .sum();
            ScoredCandidate {
                key: doc.key.clone(),
                score,
            }
        })
        .collect())
}

pub fn score_tfidf(index: &TermIndex, context: &DialogueContext) -> Ranking {
    let query = tokenize(&context.query_text());
    Ranking::new(
        context.dialogue_id.clone(),
        context.current().index,
        tfidf_scores(index, &query),
    )
}

pub fn score_bm25(index: &TermIndex, context: &DialogueContext, k1: f64, b: f64) -> Result<Ranking> {
    let query = tokenize(&context.query_text());
    Ok(Ranking::new(
        context.dialogue_id.clone(),
        context.current().index,
        bm25_scores(index, &query, Bm25Params { k1, b })?,
    ))
}
