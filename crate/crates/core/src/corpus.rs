//! Knowledge base, dialogue logs, turn labels and dialogue contexts.
//!
//! Three files make up a corpus:
//!
//! * knowledge: `{ domain: { "faqs": [doc], "entities": { id: { "name", "docs": [doc] } } } }`
//!   where `doc` is `{ doc_id, title, body }`
//! * logs: `[ { dialogue_id, turns: [ { speaker: "U" | "S", text } ] } ]`
//! * labels: `[ { dialogue_id, labels: [ { turn, target, knowledge: [key], response? } ] } ]`
//!
//! Domain-level snippets have no `entity_id`. Turn indices are 1-based.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::text::normalize;

/// Address of one knowledge snippet: `(domain, entity_id?, doc_id)`.
///
/// Orders domain-level keys before entity-level keys of the same domain.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KnowledgeKey {
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_id: Option<String>,
    pub doc_id: String,
}

impl KnowledgeKey {
    pub fn domain_level(domain: impl Into<String>, doc_id: impl Into<String>) -> Self {
        KnowledgeKey {
            domain: domain.into(),
            entity_id: None,
            doc_id: doc_id.into(),
        }
    }

    pub fn entity_level(domain: impl Into<String>, entity_id: impl Into<String>, doc_id: impl Into<String>) -> Self {
        KnowledgeKey {
            domain: domain.into(),
            entity_id: Some(entity_id.into()),
            doc_id: doc_id.into(),
        }
    }
}

impl fmt::Display for KnowledgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entity = self.entity_id.as_deref().unwrap_or("*");
        write!(f, "{}/{}/{}", self.domain, entity, self.doc_id)
    }
}

/// One FAQ entry: the title is the question, the body the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub domain: String,
    pub entity_id: Option<String>,
    pub entity_name: Option<String>,
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

impl KnowledgeSnippet {
    pub fn key(&self) -> KnowledgeKey {
        KnowledgeKey {
            domain: self.domain.clone(),
            entity_id: self.entity_id.clone(),
            doc_id: self.doc_id.clone(),
        }
    }

    pub fn is_entity_level(&self) -> bool {
        self.entity_id.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct DomainIndex {
    faqs: Vec<usize>,
    entities: BTreeMap<String, EntityIndex>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EntityIndex {
    name: String,
    docs: Vec<usize>,
}

/// Immutable collection of snippets indexed by domain and entity.
///
/// Snippets are stored in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    snippets: Vec<KnowledgeSnippet>,
    by_key: HashMap<KnowledgeKey, usize>,
    domains: BTreeMap<String, DomainIndex>,
}

// ---- knowledge file schema ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocEntry {
    doc_id: String,
    title: String,
    body: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct EntityEntry {
    name: String,
    #[serde(default)]
    docs: Vec<DocEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct DomainEntry {
    #[serde(default)]
    faqs: Vec<DocEntry>,
    #[serde(default)]
    entities: BTreeMap<String, EntityEntry>,
}

type KnowledgeFile = BTreeMap<String, DomainEntry>;

impl KnowledgeBase {
    /// Builds a base from loose snippets; domains and entities are inferred.
    pub fn from_snippets(snippets: impl IntoIterator<Item = KnowledgeSnippet>) -> Result<Self> {
        Self::build(Vec::new(), Vec::new(), snippets.into_iter().collect())
    }

    /// `domains` and `entities` register containers that may hold no snippets.
    fn build(
        domains: Vec<String>,
        entities: Vec<(String, String, String)>,
        mut snippets: Vec<KnowledgeSnippet>,
    ) -> Result<Self> {
        snippets.sort_by_key(|s| s.key());
        let mut kb = KnowledgeBase::default();
        for d in domains {
            kb.domains.entry(d).or_default();
        }
        for (domain, id, name) in entities {
            let entry = kb.domains.entry(domain.clone()).or_default();
            if entry.entities.contains_key(&id) {
                return Err(Error::DuplicateRecord(format!("entity {domain}/{id}")));
            }
            entry.entities.insert(id, EntityIndex { name, docs: Vec::new() });
        }
        for (i, s) in snippets.iter().enumerate() {
            let key = s.key();
            let context = format!("snippet {key}");
            if normalize(&s.domain).is_empty() {
                return Err(Error::EmptyField {
                    context,
                    field: "domain",
                });
            }
            if normalize(&s.doc_id).is_empty() {
                return Err(Error::EmptyField {
                    context,
                    field: "doc_id",
                });
            }
            if normalize(&s.title).is_empty() {
                return Err(Error::EmptyField {
                    context,
                    field: "title",
                });
            }
            if normalize(&s.body).is_empty() {
                return Err(Error::EmptyField { context, field: "body" });
            }
            if s.entity_id.is_some() != s.entity_name.is_some() {
                return Err(Error::InvalidLabel(format!(
                    "{context}: entity_name must be present exactly when entity_id is"
                )));
            }
            if kb.by_key.insert(key.clone(), i).is_some() {
                return Err(Error::DuplicateSnippet(key.to_string()));
            }
            let domain = kb.domains.entry(s.domain.clone()).or_default();
            match (&s.entity_id, &s.entity_name) {
                (Some(id), Some(name)) => {
                    let entity = domain.entities.entry(id.clone()).or_insert_with(|| EntityIndex {
                        name: name.clone(),
                        docs: Vec::new(),
                    });
                    if &entity.name != name {
                        return Err(Error::InvalidLabel(format!(
                            "{context}: entity name `{name}` conflicts with `{}`",
                            entity.name
                        )));
                    }
                    entity.docs.push(i);
                }
                _ => domain.faqs.push(i),
            }
        }
        kb.snippets = snippets;
        Ok(kb)
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn snippets(&self) -> &[KnowledgeSnippet] {
        &self.snippets
    }

    pub fn get(&self, key: &KnowledgeKey) -> Option<&KnowledgeSnippet> {
        self.by_key.get(key).map(|&i| &self.snippets[i])
    }

    pub fn resolve(&self, key: &KnowledgeKey, context: &str) -> Result<&KnowledgeSnippet> {
        self.get(key).ok_or_else(|| Error::UnresolvedKnowledge {
            context: context.to_string(),
            key: key.to_string(),
        })
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domains.keys().map(String::as_str)
    }

    pub fn has_domain(&self, domain: &str) -> bool {
        self.domains.contains_key(domain)
    }

    pub fn has_entity(&self, domain: &str, entity_id: &str) -> bool {
        self.domains
            .get(domain)
            .is_some_and(|d| d.entities.contains_key(entity_id))
    }

    pub fn entity_name(&self, domain: &str, entity_id: &str) -> Option<&str> {
        self.domains
            .get(domain)?
            .entities
            .get(entity_id)
            .map(|e| e.name.as_str())
    }

    /// `(domain, entity_id, name)` for every registered entity.
    pub fn entities(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.domains.iter().flat_map(|(d, idx)| {
            idx.entities
                .iter()
                .map(move |(id, e)| (d.as_str(), id.as_str(), e.name.as_str()))
        })
    }

    /// Domain-level snippets of `domain`, in key order; `None` if the domain is unknown.
    pub fn domain_snippets(&self, domain: &str) -> Option<Vec<&KnowledgeSnippet>> {
        let d = self.domains.get(domain)?;
        Some(d.faqs.iter().map(|&i| &self.snippets[i]).collect())
    }

    /// Snippets of one entity, in key order; `None` if the entity is unknown.
    pub fn entity_snippets(&self, domain: &str, entity_id: &str) -> Option<Vec<&KnowledgeSnippet>> {
        let e = self.domains.get(domain)?.entities.get(entity_id)?;
        Some(e.docs.iter().map(|&i| &self.snippets[i]).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: KnowledgeFile = io::read_json(path)?;
        Self::from_file_repr(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.to_file_repr())
    }

    fn from_file_repr(file: KnowledgeFile) -> Result<Self> {
        let mut domains = Vec::new();
        let mut entities = Vec::new();
        let mut snippets = Vec::new();
        for (domain, entry) in file {
            domains.push(domain.clone());
            for doc in entry.faqs {
                snippets.push(KnowledgeSnippet {
                    domain: domain.clone(),
                    entity_id: None,
                    entity_name: None,
                    doc_id: doc.doc_id,
                    title: doc.title,
                    body: doc.body,
                });
            }
            for (id, entity) in entry.entities {
                if normalize(&entity.name).is_empty() {
                    return Err(Error::EmptyField {
                        context: format!("entity {domain}/{id}"),
                        field: "name",
                    });
                }
                entities.push((domain.clone(), id.clone(), entity.name.clone()));
                for doc in entity.docs {
                    snippets.push(KnowledgeSnippet {
                        domain: domain.clone(),
                        entity_id: Some(id.clone()),
                        entity_name: Some(entity.name.clone()),
                        doc_id: doc.doc_id,
                        title: doc.title,
                        body: doc.body,
                    });
                }
            }
        }
        Self::build(domains, entities, snippets)
    }

    fn to_file_repr(&self) -> KnowledgeFile {
        let doc = |i: &usize| {
            let s = &self.snippets[*i];
            DocEntry {
                doc_id: s.doc_id.clone(),
                title: s.title.clone(),
                body: s.body.clone(),
            }
        };
        self.domains
            .iter()
            .map(|(d, idx)| {
                let entry = DomainEntry {
                    faqs: idx.faqs.iter().map(doc).collect(),
                    entities: idx
                        .entities
                        .iter()
                        .map(|(id, e)| {
                            (
                                id.clone(),
                                EntityEntry {
                                    name: e.name.clone(),
                                    docs: e.docs.iter().map(doc).collect(),
                                },
                            )
                        })
                        .collect(),
                };
                (d.clone(), entry)
            })
            .collect()
    }
}

/// Load a knowledge file.
pub fn load_knowledge_base(path: &Path) -> Result<KnowledgeBase> {
    KnowledgeBase::load(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "U")]
    User,
    #[serde(rename = "S")]
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// 1-based position in the dialogue.
    pub index: usize,
}

/// Ground truth for one user turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLabel {
    #[serde(rename = "turn")]
    pub turn_index: usize,
    pub target: bool,
    #[serde(rename = "knowledge", default)]
    pub knowledge_refs: Vec<KnowledgeKey>,
    #[serde(rename = "response", default, skip_serializing_if = "Option::is_none")]
    pub gold_response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<Turn>,
    /// Sorted by turn index. `None` when the labels file has no entry.
    pub labels: Option<Vec<TurnLabel>>,
}

impl Dialogue {
    pub fn turn(&self, t: usize) -> Option<&Turn> {
        t.checked_sub(1).and_then(|i| self.turns.get(i))
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::User)
    }

    pub fn label(&self, t: usize) -> Option<&TurnLabel> {
        self.labels.as_ref()?.iter().find(|l| l.turn_index == t)
    }

    /// Gold knowledge-seeking flag for turn `t`.
    ///
    /// In a labeled dialogue every user turn without an explicit label is a
    /// non-target turn. Unlabeled dialogues have no gold at all.
    pub fn gold_target(&self, t: usize) -> Option<bool> {
        self.labels.as_ref()?;
        match self.turn(t) {
            Some(turn) if turn.speaker == Speaker::User => Some(self.label(t).is_some_and(|l| l.target)),
            _ => None,
        }
    }

    /// Labels with `target = true`.
    pub fn targets(&self) -> impl Iterator<Item = &TurnLabel> {
        self.labels.iter().flatten().filter(|l| l.target)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogTurn {
    speaker: Speaker,
    text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogEntry {
    dialogue_id: String,
    turns: Vec<LogTurn>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelEntry {
    dialogue_id: String,
    labels: Vec<TurnLabel>,
}

/// Loads dialogue logs and, optionally, labels. When `kb` is given every
/// knowledge reference is resolved against it.
pub fn load_dialogues(
    logs_path: &Path,
    labels_path: Option<&Path>,
    kb: Option<&KnowledgeBase>,
) -> Result<Vec<Dialogue>> {
    let logs: Vec<LogEntry> = io::read_json(logs_path)?;
    let labels: Option<Vec<LabelEntry>> = labels_path.map(io::read_json).transpose()?;
    assemble(logs, labels, kb)
}

fn assemble(logs: Vec<LogEntry>, labels: Option<Vec<LabelEntry>>, kb: Option<&KnowledgeBase>) -> Result<Vec<Dialogue>> {
    let mut dialogues = Vec::with_capacity(logs.len());
    let mut position = HashMap::new();
    for entry in logs {
        if position.insert(entry.dialogue_id.clone(), dialogues.len()).is_some() {
            return Err(Error::DuplicateRecord(format!("dialogue `{}`", entry.dialogue_id)));
        }
        let turns = entry
            .turns
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                if normalize(&t.text).is_empty() {
                    return Err(Error::EmptyField {
                        context: format!("dialogue `{}` turn {}", entry.dialogue_id, i + 1),
                        field: "text",
                    });
                }
                Ok(Turn {
                    speaker: t.speaker,
                    text: t.text,
                    index: i + 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        dialogues.push(Dialogue {
            dialogue_id: entry.dialogue_id,
            turns,
            labels: None,
        });
    }

    for entry in labels.into_iter().flatten() {
        let &i = position
            .get(&entry.dialogue_id)
            .ok_or_else(|| Error::DanglingLabel(entry.dialogue_id.clone()))?;
        let dialogue = &mut dialogues[i];
        if dialogue.labels.is_some() {
            return Err(Error::DuplicateRecord(format!(
                "labels for dialogue `{}`",
                entry.dialogue_id
            )));
        }
        let mut labels = entry.labels;
        labels.sort_by_key(|l| l.turn_index);
        let mut seen = HashSet::new();
        for label in &labels {
            validate_label(dialogue, label, kb)?;
            if !seen.insert(label.turn_index) {
                return Err(Error::DuplicateRecord(format!(
                    "label for dialogue `{}` turn {}",
                    dialogue.dialogue_id, label.turn_index
                )));
            }
        }
        dialogue.labels = Some(labels);
    }
    Ok(dialogues)
}

fn validate_label(dialogue: &Dialogue, label: &TurnLabel, kb: Option<&KnowledgeBase>) -> Result<()> {
    let id = &dialogue.dialogue_id;
    let turn = dialogue.turn(label.turn_index).ok_or_else(|| Error::TurnOutOfRange {
        dialogue_id: id.clone(),
        turn: label.turn_index,
        len: dialogue.turns.len(),
    })?;
    if turn.speaker != Speaker::User {
        return Err(Error::NotUserTurn {
            dialogue_id: id.clone(),
            turn: label.turn_index,
        });
    }
    if label.target && label.knowledge_refs.is_empty() {
        return Err(Error::InvalidLabel(format!(
            "dialogue `{id}` turn {}: knowledge-seeking turn without knowledge",
            label.turn_index
        )));
    }
    if let Some(kb) = kb {
        let context = format!("dialogue `{id}` turn {}", label.turn_index);
        for key in &label.knowledge_refs {
            kb.resolve(key, &context)?;
        }
    }
    Ok(())
}

/// Writes logs (and labels for labeled dialogues) in the loader's format.
pub fn save_dialogues(dialogues: &[Dialogue], logs_path: &Path, labels_path: Option<&Path>) -> Result<()> {
    let logs: Vec<LogEntry> = dialogues
        .iter()
        .map(|d| LogEntry {
            dialogue_id: d.dialogue_id.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| LogTurn {
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
                .collect(),
        })
        .collect();
    io::write_json(logs_path, &logs)?;
    if let Some(path) = labels_path {
        let labels: Vec<LabelEntry> = dialogues
            .iter()
            .filter_map(|d| {
                d.labels.as_ref().map(|l| LabelEntry {
                    dialogue_id: d.dialogue_id.clone(),
                    labels: l.clone(),
                })
            })
            .collect();
        io::write_json(path, &labels)?;
    }
    Ok(())
}

/// The window `U_t`: the last `min(w, t)` turns ending at user turn `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueContext {
    pub dialogue_id: String,
    pub turns: Vec<Turn>,
    pub window: usize,
}

impl DialogueContext {
    /// Concatenation of every turn in the window, both speakers.
    pub fn query_text(&self) -> String {
        self.turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn current(&self) -> &Turn {
        self.turns.last().expect("context is never empty")
    }
}

pub const DEFAULT_WINDOW: usize = 5;

pub fn build_context(dialogue: &Dialogue, t: usize, w: usize) -> Result<DialogueContext> {
    if w == 0 {
        return Err(Error::InvalidParameter("window size must be at least 1".into()));
    }
    let turn = dialogue.turn(t).ok_or_else(|| Error::TurnOutOfRange {
        dialogue_id: dialogue.dialogue_id.clone(),
        turn: t,
        len: dialogue.turns.len(),
    })?;
    if turn.speaker != Speaker::User {
        return Err(Error::NotUserTurn {
            dialogue_id: dialogue.dialogue_id.clone(),
            turn: t,
        });
    }
    let start = t.saturating_sub(w);
    Ok(DialogueContext {
        dialogue_id: dialogue.dialogue_id.clone(),
        turns: dialogue.turns[start..t].to_vec(),
        window: w,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_dialogues: usize,
    pub n_augmented_turns: usize,
    pub n_utterances: usize,
    pub n_domain_snippets: usize,
    pub n_entity_snippets: usize,
    pub n_entities: usize,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(self, o: CorpusStats) -> CorpusStats {
        CorpusStats {
            n_dialogues: self.n_dialogues + o.n_dialogues,
            n_augmented_turns: self.n_augmented_turns + o.n_augmented_turns,
            n_utterances: self.n_utterances + o.n_utterances,
            n_domain_snippets: self.n_domain_snippets + o.n_domain_snippets,
            n_entity_snippets: self.n_entity_snippets + o.n_entity_snippets,
            n_entities: self.n_entities + o.n_entities,
        }
    }
}

pub fn corpus_stats(kb: &KnowledgeBase, dialogues: &[Dialogue]) -> CorpusStats {
    let n_entity_snippets = kb.snippets().iter().filter(|s| s.is_entity_level()).count();
    CorpusStats {
        n_dialogues: dialogues.len(),
        n_augmented_turns: dialogues.iter().map(|d| d.targets().count()).sum(),
        n_utterances: dialogues.iter().map(|d| d.turns.len()).sum(),
        n_domain_snippets: kb.len() - n_entity_snippets,
        n_entity_snippets,
        n_entities: kb.entities().count(),
    }
}

/// Per-domain snippet and entity counts, shaped like a knowledge statistics table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain: String,
    pub n_domain_snippets: usize,
    pub n_entities: usize,
    pub n_entity_snippets: usize,
}

pub fn domain_stats(kb: &KnowledgeBase) -> Vec<DomainStats> {
    kb.domains
        .iter()
        .map(|(d, idx)| DomainStats {
            domain: d.clone(),
            n_domain_snippets: idx.faqs.len(),
            n_entities: idx.entities.len(),
            n_entity_snippets: idx.entities.values().map(|e| e.docs.len()).sum(),
        })
        .collect()
}

/// Every gold knowledge key of every labeled target turn, grouped by turn.
pub fn gold_knowledge(dialogues: &[Dialogue]) -> BTreeMap<(String, usize), BTreeSet<KnowledgeKey>> {
    let mut out = BTreeMap::new();
    for d in dialogues {
        for l in d.targets() {
            out.insert(
                (d.dialogue_id.clone(), l.turn_index),
                l.knowledge_refs.iter().cloned().collect(),
            );
        }
    }
    out
}
