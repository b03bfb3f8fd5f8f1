use std::collections::HashMap;

use crate::corpus::KnowledgeKey;
use crate::error::{Error, Result};
use crate::selection::CandidateDocument;

/// Smoothed inverse document frequency, `ln((1 + N) / (1 + df)) + 1`.
pub fn smooth_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Okapi inverse document frequency, `ln((N - df + 0.5) / (df + 0.5) + 1)`.
pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

#[derive(Debug, Clone)]
pub(crate) struct IndexedDoc {
    pub(crate) key: KnowledgeKey,
    /// (term id, count), sorted by term id
    pub(crate) tf: Vec<(u32, u32)>,
    pub(crate) len: usize,
    pub(crate) tfidf_norm: f64,
}

/// Term statistics over a candidate set. Immutable after [`build_index`].
#[derive(Debug, Clone)]
pub struct TermIndex {
    vocabulary: HashMap<String, u32>,
    terms: Vec<String>,
    df: Vec<usize>,
    pub(crate) docs: Vec<IndexedDoc>,
    avg_len: f64,
}

pub fn build_index(docs: &[CandidateDocument]) -> Result<TermIndex> {
    if docs.is_empty() {
        return Err(Error::InvalidParameter("cannot index an empty candidate list".into()));
    }
    let mut vocabulary: HashMap<String, u32> = HashMap::new();
    let mut terms: Vec<String> = Vec::new();
    let mut df: Vec<usize> = Vec::new();
    let mut indexed = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for tok in doc.text.iter() {
            let id = match vocabulary.get(tok) {
                Some(&id) => id,
                None => {
                    let id = terms.len() as u32;
                    vocabulary.insert(tok.clone(), id);
                    terms.push(tok.clone());
                    df.push(0);
                    id
                }
            };
            *counts.entry(id).or_default() += 1;
        }
        let mut tf: Vec<(u32, u32)> = counts.into_iter().collect();
        tf.sort_unstable();
        for &(id, _) in &tf {
            df[id as usize] += 1;
        }
        indexed.push(IndexedDoc {
            key: doc.key.clone(),
            tf,
            len: doc.text.len(),
            tfidf_norm: 0.0,
        });
    }
    let n = indexed.len();
    for doc in &mut indexed {
        doc.tfidf_norm = doc
            .tf
            .iter()
            .map(|&(id, c)| {
                let w = f64::from(c) * smooth_idf(n, df[id as usize]);
                w * w
            })
            .sum::<f64>()
            .sqrt();
    }
    let avg_len = indexed.iter().map(|d| d.len as f64).sum::<f64>() / n as f64;
    Ok(TermIndex {
        vocabulary,
        terms,
        df,
        docs: indexed,
        avg_len,
    })
}

impl TermIndex {
    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    /// Terms in first-seen order; a term's position is its id.
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.vocabulary.get(term).copied()
    }

    pub fn df(&self, term: &str) -> usize {
        self.term_id(term).map_or(0, |id| self.df[id as usize])
    }

    pub(crate) fn df_by_id(&self, id: u32) -> usize {
        self.df[id as usize]
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, i: usize) -> usize {
        self.docs[i].len
    }

    pub fn doc_key(&self, i: usize) -> &KnowledgeKey {
        &self.docs[i].key
    }

    pub fn tf(&self, i: usize, term: &str) -> u32 {
        let Some(id) = self.term_id(term) else {
            return 0;
        };
        let tf = &self.docs[i].tf;
        tf.binary_search_by_key(&id, |&(t, _)| t).map_or(0, |pos| tf[pos].1)
    }
}
