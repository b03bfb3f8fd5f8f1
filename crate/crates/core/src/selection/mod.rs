//! Knowledge selection: candidate construction, TF-IDF and BM25 ranking,
//! argmax selection, external classifier ingestion and negative sampling.
//!
//! Candidates are always scored within a scope: all domain-level snippets of
//! one domain, or all snippets of one entity. Entity-level documents carry the
//! entity name in front of their title and body so that otherwise identical
//! FAQ text differs between entities.
//!
//! Rankings are ordered by score descending, then by key ascending, so the
//! outcome never depends on evaluation order.

mod external;
mod index;
mod negatives;
mod scoring;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{KnowledgeBase, KnowledgeKey, KnowledgeSnippet};
use crate::error::{Error, Result};
use crate::text::{tokenize, TokenSequence};

pub use external::{ingest_external_selection_scores, load_selection_scores, GoldScopes, ScopeResolver};
pub use index::{bm25_idf, build_index, smooth_idf, TermIndex};
pub use negatives::{prep_negatives, sample_negatives, NegativeRecord, NegativeSample, DEFAULT_NEGATIVES};
pub use scoring::{bm25_scores, score_bm25, score_tfidf, tfidf_scores, Bm25Params};

/// The set of snippets a turn is scored against.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CandidateScope {
    DomainLevel(String),
    EntityLevel(String, String),
}

impl CandidateScope {
    /// Scope that contains `key`.
    pub fn of_key(key: &KnowledgeKey) -> Self {
        match &key.entity_id {
            Some(e) => CandidateScope::EntityLevel(key.domain.clone(), e.clone()),
            None => CandidateScope::DomainLevel(key.domain.clone()),
        }
    }

    /// Scope of a turn's annotation: that of its first gold key.
    pub fn of_gold(refs: &[KnowledgeKey]) -> Option<Self> {
        refs.first().map(Self::of_key)
    }

    pub fn contains(&self, key: &KnowledgeKey) -> bool {
        *self == Self::of_key(key)
    }

    /// Snippets in scope, in key order.
    pub fn resolve<'a>(&self, kb: &'a KnowledgeBase) -> Result<Vec<&'a KnowledgeSnippet>> {
        match self {
            CandidateScope::DomainLevel(d) => kb
                .domain_snippets(d)
                .ok_or_else(|| Error::UnknownScope(format!("domain `{d}`"))),
            CandidateScope::EntityLevel(d, e) => kb
                .entity_snippets(d, e)
                .ok_or_else(|| Error::UnknownScope(format!("entity `{d}/{e}`"))),
        }
    }
}

/// A snippet prepared for scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateDocument {
    pub key: KnowledgeKey,
    pub text: TokenSequence,
}

impl CandidateDocument {
    pub fn from_snippet(s: &KnowledgeSnippet) -> Self {
        let mut text = TokenSequence::default();
        if let Some(name) = &s.entity_name {
            text.extend(tokenize(name));
        }
        text.extend(tokenize(&s.title));
        text.extend(tokenize(&s.body));
        CandidateDocument { key: s.key(), text }
    }
}

pub fn build_candidates(kb: &KnowledgeBase, scope: &CandidateScope) -> Result<Vec<CandidateDocument>> {
    Ok(scope
        .resolve(kb)?
        .into_iter()
        .map(CandidateDocument::from_snippet)
        .collect())
}

/// Every snippet in the base, regardless of scope.
pub fn build_all_candidates(kb: &KnowledgeBase) -> Vec<CandidateDocument> {
    kb.snippets().iter().map(CandidateDocument::from_snippet).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    #[serde(flatten)]
    pub key: KnowledgeKey,
    pub score: f64,
}

fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key))
}

/// All candidates of one turn, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub dialogue_id: String,
    #[serde(rename = "turn")]
    pub turn_index: usize,
    #[serde(rename = "ranking")]
    candidates: Vec<ScoredCandidate>,
}

impl Ranking {
    /// Sorts by (score desc, key asc).
    pub fn new(dialogue_id: String, turn_index: usize, mut candidates: Vec<ScoredCandidate>) -> Self {
        candidates.sort_by(rank_order);
        Ranking {
            dialogue_id,
            turn_index,
            candidates,
        }
    }

    pub fn candidates(&self) -> &[ScoredCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &KnowledgeKey> {
        self.candidates.iter().map(|c| &c.key)
    }

    /// 1-based rank of `key`.
    pub fn rank_of(&self, key: &KnowledgeKey) -> Option<usize> {
        self.candidates.iter().position(|c| &c.key == key).map(|p| p + 1)
    }

    pub fn top(&self, n: usize) -> &[ScoredCandidate] {
        &self.candidates[..n.min(self.candidates.len())]
    }

    /// Keeps only the first `n` candidates.
    pub fn truncate(&mut self, n: usize) {
        self.candidates.truncate(n);
    }
}

/// Argmax selection.
pub fn select_top1(ranking: &Ranking) -> Result<&KnowledgeKey> {
    ranking.candidates.first().map(|c| &c.key).ok_or_else(|| {
        Error::MissingData(format!(
            "empty ranking for {} turn {}",
            ranking.dialogue_id, ranking.turn_index
        ))
    })
}

/// How many snippets a knowledge-seeking turn receives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "min_score")]
pub enum SelectionPolicy {
    #[default]
    Top1,
    /// Every candidate scoring at least the threshold; never fewer than the top one.
    Threshold(f64),
}

pub fn select(ranking: &Ranking, policy: SelectionPolicy) -> Result<Vec<KnowledgeKey>> {
    let top = select_top1(ranking)?.clone();
    Ok(match policy {
        SelectionPolicy::Top1 => vec![top],
        SelectionPolicy::Threshold(t) => {
            let above: Vec<KnowledgeKey> = ranking
                .candidates
                .iter()
                .take_while(|c| c.score >= t)
                .map(|c| c.key.clone())
                .collect();
            if above.is_empty() {
                vec![top]
            } else {
                above
            }
        }
    })
}
