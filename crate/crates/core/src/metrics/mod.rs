//! Evaluation: detection classification metrics, ranking metrics for
//! selection, token-overlap metrics for responses and aggregation of human
//! preference votes.

mod detection;
mod human;
mod meteor;
mod overlap;
mod ranking;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::error::{Error, Result};
use crate::generation::GeneratedResponse;

pub use detection::{detection_metrics, ConfusionCounts, DetectionReport};
pub use human::{human_eval_majority, load_votes, majority, HumanEvalReport, Vote, VoteRecord};
pub use meteor::{align, meteor, meteor_from, Alignment};
pub use overlap::{bleu4, distinct_n, rouge_l, sentence_bleu4_smoothed, unigram_f1};
pub use ranking::{mrr_at_k, recall_at_k, selection_report, GoldKnowledge, SelectionReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub unigram_f1: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub n_turns: usize,
}

/// Compares responses with the gold responses of labeled target turns.
/// Responses for any other turn are ignored; target turns without a gold
/// response are skipped.
pub fn generation_report(responses: &[GeneratedResponse], dialogues: &[Dialogue]) -> Result<GenerationReport> {
    let by_turn: std::collections::BTreeMap<_, _> = responses.iter().map(|r| (r.key(), r.text.as_str())).collect();
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for d in dialogues {
        for l in d.targets() {
            let Some(gold) = &l.gold_response else { continue };
            let hyp = by_turn.get(&(d.dialogue_id.clone(), l.turn_index)).ok_or_else(|| {
                Error::CoverageMismatch(format!("no response for {} turn {}", d.dialogue_id, l.turn_index))
            })?;
            hyps.push(*hyp);
            refs.push(gold.as_str());
        }
    }
    if hyps.is_empty() {
        return Err(Error::MissingData("no target turns with gold responses".into()));
    }
    let n = hyps.len() as f64;
    let mean = |f: fn(&str, &str) -> f64| hyps.iter().zip(&refs).map(|(h, r)| f(h, r)).sum::<f64>() / n;
    Ok(GenerationReport {
        unigram_f1: mean(unigram_f1),
        distinct_1: distinct_n(&hyps, 1)?,
        distinct_2: distinct_n(&hyps, 2)?,
        bleu4: bleu4(&hyps, &refs)?,
        meteor: mean(meteor),
        rouge_l: mean(rouge_l),
        n_turns: hyps.len(),
    })
}
