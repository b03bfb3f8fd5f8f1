//! Knowledge-seeking turn detection.
//!
//! The unsupervised baseline fits a [`LofModel`] on utterance vectors of
//! in-coverage turns and flags a user turn whose vector is a local outlier.
//! Vectors come from an external encoder file or from [`TfidfEncoder`].
//! Scores from an external classifier can be ingested for evaluation.

mod encoder;
mod lof;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub use encoder::TfidfEncoder;
pub use lof::{
    detect_turn, euclidean, fit_lof, fit_lof_with, lof_score, quantile, DenseVector, LofModel, LofParams,
    DEFAULT_NEIGHBORS, DEFAULT_QUANTILE, DISTANCE_FLOOR,
};

/// Default decision boundary for external classifier probabilities (inclusive).
pub const EXTERNAL_THRESHOLD: f64 = 0.5;

/// `(dialogue_id, turn)`
pub type TurnKey = (String, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPrediction {
    pub dialogue_id: String,
    #[serde(rename = "turn")]
    pub turn_index: usize,
    /// LOF value or external probability.
    pub score: f64,
    pub predicted: bool,
}

impl DetectionPrediction {
    pub fn key(&self) -> TurnKey {
        (self.dialogue_id.clone(), self.turn_index)
    }
}

#[derive(Debug, Deserialize)]
struct VectorRecord {
    dialogue_id: String,
    turn: usize,
    vec: Vec<f64>,
}

/// Reads a vectors file (`{dialogue_id, turn, vec}` per line).
pub fn load_vectors(path: &Path) -> Result<BTreeMap<TurnKey, DenseVector>> {
    let records: Vec<VectorRecord> = io::read_jsonl(path)?;
    let mut out = BTreeMap::new();
    let mut dim = None;
    for r in records {
        let context = format!("{} turn {}", r.dialogue_id, r.turn);
        let v = DenseVector::new(r.vec).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{context}: {m}")),
            e => e,
        })?;
        match dim {
            None => dim = Some(v.dim()),
            Some(d) if d != v.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.dim(),
                })
            }
            _ => {}
        }
        if out.insert((r.dialogue_id, r.turn), v).is_some() {
            return Err(Error::DuplicateRecord(format!("vector for {context}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct ScoreRecord {
    dialogue_id: String,
    turn: usize,
    score: f64,
}

/// Reads classifier probabilities (`{dialogue_id, turn, score}` per line);
/// a turn is predicted knowledge-seeking when `score >= 0.5`.
pub fn ingest_external_detection_scores(path: &Path) -> Result<Vec<DetectionPrediction>> {
    ingest_external_detection_scores_with(path, EXTERNAL_THRESHOLD)
}

pub fn ingest_external_detection_scores_with(path: &Path, threshold: f64) -> Result<Vec<DetectionPrediction>> {
    let records: Vec<ScoreRecord> = io::read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let context = format!("{} turn {}", r.dialogue_id, r.turn);
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::ScoreOutOfRange {
                context,
                score: r.score,
            });
        }
        if !seen.insert((r.dialogue_id.clone(), r.turn)) {
            return Err(Error::DuplicateRecord(format!("detection score for {context}")));
        }
        out.push(DetectionPrediction {
            predicted: r.score >= threshold,
            dialogue_id: r.dialogue_id,
            turn_index: r.turn,
            score: r.score,
        });
    }
    out.sort_by_key(DetectionPrediction::key);
    Ok(out)
}

/// Scores every `(turn, vector)` pair with the model.
pub fn predict_turns<'a>(
    model: &LofModel,
    vectors: impl IntoIterator<Item = (&'a TurnKey, &'a DenseVector)>,
) -> Result<Vec<DetectionPrediction>> {
    vectors
        .into_iter()
        .map(|((id, turn), v)| {
            let score = model.score(v)?;
            Ok(DetectionPrediction {
                dialogue_id: id.clone(),
                turn_index: *turn,
                score,
                predicted: score > model.threshold(),
            })
        })
        .collect()
}
