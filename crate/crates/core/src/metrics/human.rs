use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vote {
    A,
    B,
    #[serde(rename = "NS")]
    NotSure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub instance_id: String,
    pub votes: Vec<Vote>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalReport {
    pub pct_win: f64,
    pub pct_lose: f64,
    pub pct_tie: f64,
    pub n_instances: usize,
}

/// Strict-majority label of one instance; `None` means a tie.
pub fn majority(votes: &[Vote]) -> Option<Vote> {
    [Vote::A, Vote::B, Vote::NotSure]
        .into_iter()
        .find(|v| 2 * votes.iter().filter(|x| *x == v).count() > votes.len())
}

/// %W counts A majorities, %L counts B majorities, everything else is a tie
/// (including a "not sure" majority).
pub fn human_eval_majority(instances: &[VoteRecord]) -> Result<HumanEvalReport> {
    if instances.is_empty() {
        return Err(Error::MissingData("no human-evaluation instances".into()));
    }
    let (mut win, mut lose, mut tie) = (0usize, 0usize, 0usize);
    for inst in instances {
        if inst.votes.is_empty() {
            return Err(Error::EmptyField {
                context: format!("instance {}", inst.instance_id),
                field: "votes",
            });
        }
        match majority(&inst.votes) {
            Some(Vote::A) => win += 1,
            Some(Vote::B) => lose += 1,
            _ => tie += 1,
        }
    }
    let n = instances.len() as f64;
    Ok(HumanEvalReport {
        pct_win: 100.0 * win as f64 / n,
        pct_lose: 100.0 * lose as f64 / n,
        pct_tie: 100.0 * tie as f64 / n,
        n_instances: instances.len(),
    })
}

pub fn load_votes(path: &Path) -> Result<Vec<VoteRecord>> {
    let records: Vec<VoteRecord> = io::read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.instance_id.as_str()) {
            return Err(Error::DuplicateRecord(format!("votes for instance {}", r.instance_id)));
        }
    }
    Ok(records)
}
