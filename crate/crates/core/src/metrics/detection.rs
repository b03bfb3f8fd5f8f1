use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::detection::TurnKey;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Zero-denominator precision and recall are reported as 0 and flagged.
    pub fn report(&self) -> DetectionReport {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        DetectionReport {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
            degenerate: self.tp + self.fp == 0 || self.tp + self.fn_ == 0,
            counts: *self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No positive predictions or no positive gold turns.
    pub degenerate: bool,
    pub counts: ConfusionCounts,
}

/// Scores predictions against every user turn of every labeled dialogue.
/// Predictions for dialogues without labels are ignored.
pub fn detection_metrics(
    preds: impl IntoIterator<Item = (TurnKey, bool)>,
    dialogues: &[Dialogue],
) -> Result<DetectionReport> {
    let mut by_turn: BTreeMap<TurnKey, bool> = BTreeMap::new();
    for (key, p) in preds {
        if by_turn.insert(key.clone(), p).is_some() {
            return Err(Error::DuplicateRecord(format!(
                "prediction for {} turn {}",
                key.0, key.1
            )));
        }
    }
    let labeled: BTreeSet<&str> = dialogues
        .iter()
        .filter(|d| d.labels.is_some())
        .map(|d| d.dialogue_id.as_str())
        .collect();
    let mut counts = ConfusionCounts::default();
    for d in dialogues.iter().filter(|d| d.labels.is_some()) {
        for turn in d.user_turns() {
            let gold = d.gold_target(turn.index).unwrap_or(false);
            let key = (d.dialogue_id.clone(), turn.index);
            let p = by_turn
                .remove(&key)
                .ok_or_else(|| Error::CoverageMismatch(format!("no prediction for {} turn {}", key.0, key.1)))?;
            counts.add(p, gold);
        }
    }
    if let Some(((id, t), _)) = by_turn.iter().find(|((id, _), _)| labeled.contains(id.as_str())) {
        return Err(Error::CoverageMismatch(format!(
            "prediction for {id} turn {t}, which is not a user turn"
        )));
    }
    if counts.total() == 0 {
        return Err(Error::MissingData("no labeled user turns to evaluate".into()));
    }
    Ok(counts.report())
}
