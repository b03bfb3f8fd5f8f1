use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::KnowledgeKey;
use crate::detection::TurnKey;
use crate::error::{Error, Result};
use crate::selection::Ranking;

pub type GoldKnowledge = BTreeMap<TurnKey, BTreeSet<KnowledgeKey>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mrr_at_5: f64,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub n_turns: usize,
}

/// 1-based rank of the best-placed gold key.
fn best_gold_rank(ranking: &Ranking, golds: &GoldKnowledge) -> Result<usize> {
    let key = (ranking.dialogue_id.clone(), ranking.turn_index);
    let gold = golds.get(&key).ok_or_else(|| {
        Error::CoverageMismatch(format!("ranking for {} turn {} has no gold knowledge", key.0, key.1))
    })?;
    gold.iter().filter_map(|g| ranking.rank_of(g)).min().ok_or_else(|| {
        Error::CoverageMismatch(format!(
            "gold knowledge of {} turn {} is not among its candidates",
            key.0, key.1
        ))
    })
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("cutoff k must be at least 1".into()));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = Result<f64>>) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::MissingData("no rankings to evaluate".into()));
    }
    Ok(sum / n as f64)
}

pub fn mrr_at_k(rankings: &[Ranking], golds: &GoldKnowledge, k: usize) -> Result<f64> {
    check_k(k)?;
    mean(rankings.iter().map(|r| {
        let rank = best_gold_rank(r, golds)?;
        Ok(if rank <= k { 1.0 / rank as f64 } else { 0.0 })
    }))
}

/// Fraction of turns with a gold key in the top `k`.
pub fn recall_at_k(rankings: &[Ranking], golds: &GoldKnowledge, k: usize) -> Result<f64> {
    check_k(k)?;
    mean(rankings.iter().map(|r| {
        let rank = best_gold_rank(r, golds)?;
        Ok(if rank <= k { 1.0 } else { 0.0 })
    }))
}

/// MRR@5, R@1 and R@5 over exactly the turns in `golds`.
pub fn selection_report(rankings: &[Ranking], golds: &GoldKnowledge) -> Result<SelectionReport> {
    let mut seen = BTreeSet::new();
    for r in rankings {
        if !seen.insert((r.dialogue_id.clone(), r.turn_index)) {
            return Err(Error::DuplicateRecord(format!(
                "ranking for {} turn {}",
                r.dialogue_id, r.turn_index
            )));
        }
    }
    if let Some((id, t)) = golds.keys().find(|k| !seen.contains(*k)) {
        return Err(Error::CoverageMismatch(format!("no ranking for {id} turn {t}")));
    }
    Ok(SelectionReport {
        mrr_at_5: mrr_at_k(rankings, golds, 5)?,
        r_at_1: recall_at_k(rankings, golds, 1)?,
        r_at_5: recall_at_k(rankings, golds, 5)?,
        n_turns: rankings.len(),
    })
}
