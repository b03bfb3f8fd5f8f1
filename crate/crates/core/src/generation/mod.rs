//! Knowledge-grounded response production: the answer-extraction baseline and
//! ingestion of responses written by an external generator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, KnowledgeSnippet};
use crate::detection::TurnKey;
use crate::error::{Error, Result};
use crate::{io, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Extracted,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedResponse {
    pub dialogue_id: String,
    #[serde(rename = "turn")]
    pub turn_index: usize,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<ResponseSource>,
}

impl GeneratedResponse {
    pub fn key(&self) -> TurnKey {
        (self.dialogue_id.clone(), self.turn_index)
    }
}

/// Splits on blank lines (lines holding only whitespace). Single newlines
/// stay inside a paragraph; paragraphs are trimmed and empty ones dropped.
pub fn split_paragraphs(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in body.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                out.push(body[s..end].trim());
            }
        } else {
            start.get_or_insert(offset);
            end = offset + line.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push(body[s..end].trim());
    }
    out
}

/// Picks one snippet uniformly at random and returns its first paragraph,
/// or the whole body when it has only one.
pub fn extract_answer(snippets: &[&KnowledgeSnippet], seed: u64) -> Result<String> {
    let chosen = match snippets {
        [] => {
            return Err(Error::InvalidParameter(
                "answer extraction needs at least one snippet".into(),
            ))
        }
        [only] => only,
        many => &many[seed::rng(seed).random_range(0..many.len())],
    };
    let paragraphs = split_paragraphs(&chosen.body);
    Ok(match paragraphs.as_slice() {
        [first, _, ..] => first.to_string(),
        _ => chosen.body.clone(),
    })
}

/// Extraction for one turn, seeded from the turn's identity.
pub fn extract_for_turn(
    dialogue_id: &str,
    turn: usize,
    snippets: &[&KnowledgeSnippet],
    seed: u64,
) -> Result<GeneratedResponse> {
    let seed = seed::derive(seed, &[dialogue_id.as_bytes(), &turn.to_le_bytes()]);
    Ok(GeneratedResponse {
        dialogue_id: dialogue_id.to_string(),
        turn_index: turn,
        text: extract_answer(snippets, seed)?,
        source: Some(ResponseSource::Extracted),
    })
}

#[derive(Debug, Deserialize)]
struct ResponseRecord {
    dialogue_id: String,
    turn: usize,
    text: String,
}

/// Reads `{dialogue_id, turn, text}` lines, sorted by turn key.
pub fn ingest_external_responses(path: &Path) -> Result<Vec<GeneratedResponse>> {
    let records: Vec<ResponseRecord> = io::read_jsonl(path)?;
    let mut out: BTreeMap<TurnKey, GeneratedResponse> = BTreeMap::new();
    for r in records {
        let context = format!("{} turn {}", r.dialogue_id, r.turn);
        if r.text.trim().is_empty() {
            return Err(Error::EmptyField { context, field: "text" });
        }
        let key = (r.dialogue_id.clone(), r.turn);
        let resp = GeneratedResponse {
            dialogue_id: r.dialogue_id,
            turn_index: r.turn,
            text: r.text,
            source: Some(ResponseSource::External),
        };
        if out.insert(key, resp).is_some() {
            return Err(Error::DuplicateRecord(format!("response for {context}")));
        }
    }
    Ok(out.into_values().collect())
}

/// Every labeled target turn must have a response, and every response must
/// belong to one.
pub fn check_response_coverage(responses: &[GeneratedResponse], dialogues: &[Dialogue]) -> Result<()> {
    let targets: BTreeSet<TurnKey> = dialogues
        .iter()
        .flat_map(|d| d.targets().map(move |l| (d.dialogue_id.clone(), l.turn_index)))
        .collect();
    let got: BTreeSet<TurnKey> = responses.iter().map(GeneratedResponse::key).collect();
    if let Some((id, t)) = targets.difference(&got).next() {
        return Err(Error::CoverageMismatch(format!("no response for {id} turn {t}")));
    }
    if let Some((id, t)) = got.difference(&targets).next() {
        return Err(Error::CoverageMismatch(format!(
            "response for {id} turn {t}, which is not a labeled knowledge-seeking turn"
        )));
    }
    Ok(())
}
