use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::corpus::{Dialogue, KnowledgeBase, KnowledgeKey};
use crate::detection::TurnKey;
use crate::error::{Error, Result};
use crate::io;
use crate::selection::{CandidateScope, Ranking, ScoredCandidate};

/// Maps a turn to the candidate set it is scored against.
pub trait ScopeResolver {
    fn scope(&self, dialogue_id: &str, turn: usize) -> Option<CandidateScope>;
}

/// Scope of every labeled target turn, taken from its annotation.
#[derive(Debug, Clone, Default)]
pub struct GoldScopes(BTreeMap<TurnKey, CandidateScope>);

impl GoldScopes {
    pub fn from_dialogues(dialogues: &[Dialogue]) -> Self {
        let mut m = BTreeMap::new();
        for d in dialogues {
            for l in d.targets() {
                if let Some(s) = CandidateScope::of_gold(&l.knowledge_refs) {
                    m.insert((d.dialogue_id.clone(), l.turn_index), s);
                }
            }
        }
        GoldScopes(m)
    }

    pub fn turns(&self) -> impl Iterator<Item = (&TurnKey, &CandidateScope)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl ScopeResolver for GoldScopes {
    fn scope(&self, dialogue_id: &str, turn: usize) -> Option<CandidateScope> {
        self.0.get(&(dialogue_id.to_string(), turn)).cloned()
    }
}

#[derive(Debug, Deserialize)]
struct ScoreRecord {
    dialogue_id: String,
    turn: usize,
    #[serde(flatten)]
    key: KnowledgeKey,
    score: f64,
}

/// Reads a score file into per-turn candidate lists, checking ranges and
/// duplicates but not coverage.
pub fn load_selection_scores(path: &Path) -> Result<BTreeMap<TurnKey, BTreeMap<KnowledgeKey, f64>>> {
    let records: Vec<ScoreRecord> = io::read_jsonl(path)?;
    let mut by_turn: BTreeMap<TurnKey, BTreeMap<KnowledgeKey, f64>> = BTreeMap::new();
    for r in records {
        let context = format!("{} turn {} candidate {}", r.dialogue_id, r.turn, r.key);
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::ScoreOutOfRange {
                context,
                score: r.score,
            });
        }
        let scores = by_turn.entry((r.dialogue_id, r.turn)).or_default();
        if scores.insert(r.key, r.score).is_some() {
            return Err(Error::DuplicateRecord(format!("selection score for {context}")));
        }
    }
    Ok(by_turn)
}

/// Builds a ranking for every turn the resolver knows from a classifier's
/// per-candidate probabilities. Records for other turns are ignored.
pub fn ingest_external_selection_scores(path: &Path, kb: &KnowledgeBase, scopes: &GoldScopes) -> Result<Vec<Ranking>> {
    let mut by_turn = load_selection_scores(path)?;
    by_turn.retain(|(id, t), _| scopes.scope(id, *t).is_some());
    for ((id, t), scores) in &by_turn {
        let scope = scopes.scope(id, *t).expect("retained");
        if let Some(k) = scores.keys().find(|k| !scope.contains(k) || kb.get(k).is_none()) {
            return Err(Error::CoverageMismatch(format!(
                "{id} turn {t} candidate {k} is outside the turn's scope"
            )));
        }
    }
    let mut out = Vec::with_capacity(scopes.len());
    for ((id, turn), scope) in scopes.turns() {
        let expected: BTreeSet<KnowledgeKey> = scope.resolve(kb)?.iter().map(|s| s.key()).collect();
        let got = by_turn.remove(&(id.clone(), *turn)).unwrap_or_default();
        if let Some(missing) = expected.iter().find(|k| !got.contains_key(*k)) {
            return Err(Error::CoverageMismatch(format!(
                "no score for {id} turn {turn} candidate {missing}"
            )));
        }
        let candidates = got
            .into_iter()
            .map(|(key, score)| ScoredCandidate { key, score })
            .collect();
        out.push(Ranking::new(id.clone(), *turn, candidates));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{KnowledgeSnippet, Speaker, Turn, TurnLabel};
    use std::io::Write;

    fn kb() -> KnowledgeBase {
        KnowledgeBase::from_snippets((1..=3).map(|i| KnowledgeSnippet {
            domain: "taxi".into(),
            entity_id: None,
            entity_name: None,
            doc_id: format!("c{i}"),
            title: "t".into(),
            body: "b".into(),
        }))
        .unwrap()
    }

    fn scopes() -> GoldScopes {
        GoldScopes::from_dialogues(&[Dialogue {
            dialogue_id: "x".into(),
            turns: vec![Turn {
                speaker: Speaker::User,
                text: "q".into(),
                index: 1,
            }],
            labels: Some(vec![TurnLabel {
                turn_index: 1,
                target: true,
                knowledge_refs: vec![KnowledgeKey::domain_level("taxi", "c1")],
                gold_response: None,
            }]),
        }])
    }

    fn ingest(lines: &[(&str, f64)]) -> Result<Vec<Ranking>> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let mut f = std::fs::File::create(&p).unwrap();
        for (doc, score) in lines {
            writeln!(
                f,
                r#"{{"dialogue_id":"x","turn":1,"domain":"taxi","doc_id":"{doc}","score":{score}}}"#
            )
            .unwrap();
        }
        ingest_external_selection_scores(&p, &kb(), &scopes())
    }

    fn order(r: &Ranking) -> Vec<&str> {
        r.keys().map(|k| k.doc_id.as_str()).collect()
    }

    #[test]
    fn ranks_by_probability() {
        let r = ingest(&[("c1", 0.2), ("c2", 0.9), ("c3", 0.1)]).unwrap();
        assert_eq!(order(&r[0]), ["c2", "c1", "c3"]);
        let r = ingest(&[("c3", 0.5), ("c2", 0.5), ("c1", 0.5)]).unwrap();
        assert_eq!(order(&r[0]), ["c1", "c2", "c3"]);
    }

    #[test]
    fn rejects_bad_files() {
        let e = ingest(&[("c1", 0.2), ("c2", 0.9)]).unwrap_err();
        assert!(matches!(&e, Error::CoverageMismatch(m) if m.contains("x turn 1") && m.contains("c3")));
        assert!(matches!(
            ingest(&[("c1", 0.2), ("c2", 1.5), ("c3", 0.1)]),
            Err(Error::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            ingest(&[("c1", 0.2), ("c1", 0.3), ("c2", 0.9), ("c3", 0.1)]),
            Err(Error::DuplicateRecord(_))
        ));
    }
}
