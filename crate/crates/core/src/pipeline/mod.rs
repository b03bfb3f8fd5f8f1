//! End-to-end orchestration: detection gates each user turn, detected turns
//! go through selection and response production, the rest pass through.
//! Also evaluation of prediction files and synthetic fixtures.

mod config;
mod fixture;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_context, load_dialogues, Dialogue, KnowledgeBase, KnowledgeKey};
use crate::detection::{
    fit_lof_with, ingest_external_detection_scores_with, load_vectors, DenseVector, DetectionPrediction, LofParams,
    TfidfEncoder, TurnKey,
};
use crate::error::{Error, Result};
use crate::generation::{extract_for_turn, ingest_external_responses, GeneratedResponse};
use crate::metrics::{
    detection_metrics, generation_report, DetectionReport, GenerationReport, GoldKnowledge, SelectionReport,
};
use crate::selection::{
    build_all_candidates, build_candidates, build_index, load_selection_scores, score_bm25, score_tfidf, select,
    CandidateScope, Ranking, ScoredCandidate, TermIndex,
};

pub use config::{
    DetectionConfig, DetectionMethod, GenerationConfig, GenerationMethod, Paths, PipelineConfig, ScopeFallback,
    SelectionConfig, SelectionMethod,
};
pub use fixture::{example_fixture, make_fixture, write_fixture, FixtureSizes};

/// A knowledge base with its dialogues.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub kb: KnowledgeBase,
    pub dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn load(knowledge: &Path, logs: &Path, labels: Option<&Path>) -> Result<Self> {
        let kb = KnowledgeBase::load(knowledge)?;
        let dialogues = load_dialogues(logs, labels, Some(&kb))?;
        Ok(Corpus { kb, dialogues })
    }

    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        let p = &config.paths;
        let knowledge = p
            .knowledge
            .as_deref()
            .ok_or_else(|| Error::Config("paths.knowledge is required".into()))?;
        let logs = p
            .logs
            .as_deref()
            .ok_or_else(|| Error::Config("paths.logs is required".into()))?;
        Self::load(knowledge, logs, p.labels.as_deref())
    }

    /// `(dialogue_id, turn)` of every user turn, in dialogue order.
    pub fn user_turns(&self) -> Vec<TurnKey> {
        self.dialogues
            .iter()
            .flat_map(|d| d.user_turns().map(move |t| (d.dialogue_id.clone(), t.index)))
            .collect()
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.dialogue_id == id)
    }

    pub fn gold_knowledge(&self) -> GoldKnowledge {
        crate::corpus::gold_knowledge(&self.dialogues)
            .into_iter()
            .filter(|(_, keys)| !keys.is_empty())
            .collect()
    }

    fn gold_scope(&self, key: &TurnKey) -> Option<CandidateScope> {
        let label = self.dialogue(&key.0)?.label(key.1)?;
        if !label.target {
            return None;
        }
        CandidateScope::of_gold(&label.knowledge_refs)
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub detected: bool,
    #[serde(default)]
    pub selected: Vec<KnowledgeKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Top selection score is at or below the configured floor.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_score: bool,
    /// Set when the turn had no gold scope and the whole base was searched.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unscoped: bool,
}

impl PredictionRecord {
    pub fn key(&self) -> TurnKey {
        (self.dialogue_id.clone(), self.turn)
    }

    fn pass_through(key: &TurnKey) -> Self {
        PredictionRecord {
            dialogue_id: key.0.clone(),
            turn: key.1,
            detected: false,
            selected: Vec::new(),
            response: None,
            low_score: false,
            unscoped: false,
        }
    }

    /// Selected knowledge and a response exactly when detected.
    pub fn is_gated(&self) -> bool {
        if self.detected {
            !self.selected.is_empty() && self.response.is_some()
        } else {
            self.selected.is_empty() && self.response.is_none()
        }
    }
}

fn lof_vectors(config: &PipelineConfig, corpus: &Corpus) -> Result<BTreeMap<TurnKey, DenseVector>> {
    if let Some(p) = &config.paths.vectors {
        return load_vectors(p);
    }
    let texts: Vec<&str> = corpus
        .dialogues
        .iter()
        .flat_map(|d| d.user_turns().map(|t| t.text.as_str()))
        .collect();
    let encoder = TfidfEncoder::fit(texts)?;
    Ok(corpus
        .dialogues
        .iter()
        .flat_map(|d| {
            d.user_turns()
                .map(|t| ((d.dialogue_id.clone(), t.index), encoder.encode(&t.text)))
                .collect::<Vec<_>>()
        })
        .collect())
}

/// A decision for every user turn of the corpus, sorted by turn key.
pub fn detect(config: &PipelineConfig, corpus: &Corpus) -> Result<Vec<DetectionPrediction>> {
    let turns = corpus.user_turns();
    let mut out = match config.detection.method {
        DetectionMethod::Oracle => turns
            .iter()
            .map(|key| {
                let d = corpus.dialogue(&key.0).expect("turn from corpus");
                let gold = d
                    .gold_target(key.1)
                    .ok_or_else(|| Error::MissingData(format!("oracle detection needs labels for `{}`", key.0)))?;
                Ok(DetectionPrediction {
                    dialogue_id: key.0.clone(),
                    turn_index: key.1,
                    score: if gold { 1.0 } else { 0.0 },
                    predicted: gold,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        DetectionMethod::External => {
            let path = config
                .paths
                .detection_scores
                .as_deref()
                .ok_or_else(|| Error::Config("paths.detection_scores is required".into()))?;
            let by_key: BTreeMap<TurnKey, DetectionPrediction> =
                ingest_external_detection_scores_with(path, config.detection.threshold)?
                    .into_iter()
                    .map(|p| (p.key(), p))
                    .collect();
            turns
                .iter()
                .map(|k| {
                    by_key
                        .get(k)
                        .cloned()
                        .ok_or_else(|| Error::CoverageMismatch(format!("no detection score for {} turn {}", k.0, k.1)))
                })
                .collect::<Result<Vec<_>>>()?
        }
        DetectionMethod::Lof => {
            let vectors = lof_vectors(config, corpus)?;
            let query: Vec<(TurnKey, &DenseVector)> = turns
                .iter()
                .map(|k| {
                    vectors
                        .get(k)
                        .map(|v| (k.clone(), v))
                        .ok_or_else(|| Error::CoverageMismatch(format!("no vector for {} turn {}", k.0, k.1)))
                })
                .collect::<Result<_>>()?;
            let params = LofParams {
                k: config.detection.k,
                quantile: config.detection.quantile,
            };
            match &config.paths.lof_train_vectors {
                Some(p) => {
                    let train: Vec<DenseVector> = load_vectors(p)?.into_values().collect();
                    let model = fit_lof_with(&train, params)?;
                    query
                        .into_par_iter()
                        .map(|(k, v)| {
                            let score = model.score(v)?;
                            Ok(DetectionPrediction {
                                dialogue_id: k.0,
                                turn_index: k.1,
                                score,
                                predicted: score > model.threshold(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                None => {
                    // each turn is its own training point; use its fitted score
                    let train: Vec<DenseVector> = query.iter().map(|(_, v)| (*v).clone()).collect();
                    let model = fit_lof_with(&train, params)?;
                    query
                        .into_iter()
                        .zip(model.training_scores())
                        .map(|((k, _), &score)| DetectionPrediction {
                            dialogue_id: k.0,
                            turn_index: k.1,
                            score,
                            predicted: score > model.threshold(),
                        })
                        .collect()
                }
            }
        }
    };
    out.sort_by_key(DetectionPrediction::key);
    Ok(out)
}

/// Indexes built once per scope and shared across turns.
struct Indexes {
    by_scope: BTreeMap<CandidateScope, TermIndex>,
    all: Option<TermIndex>,
}

impl Indexes {
    fn build(kb: &KnowledgeBase, scopes: &BTreeSet<CandidateScope>, need_all: bool) -> Result<Self> {
        let by_scope = scopes
            .par_iter()
            .map(|s| Ok((s.clone(), build_index(&build_candidates(kb, s)?)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let all = if need_all {
            Some(build_index(&build_all_candidates(kb))?)
        } else {
            None
        };
        Ok(Indexes { by_scope, all })
    }

    fn get(&self, scope: Option<&CandidateScope>) -> &TermIndex {
        match scope {
            Some(s) => &self.by_scope[s],
            None => self.all.as_ref().expect("built when needed"),
        }
    }
}

/// Ranks each listed turn within its scope (`None` searches the whole base).
pub fn rank_turns(
    config: &PipelineConfig,
    corpus: &Corpus,
    turns: &[(TurnKey, Option<CandidateScope>)],
) -> Result<Vec<Ranking>> {
    let sel = &config.selection;
    if sel.method == SelectionMethod::External {
        let path = config
            .paths
            .selection_scores
            .as_deref()
            .ok_or_else(|| Error::Config("paths.selection_scores is required".into()))?;
        let mut scores = load_selection_scores(path)?;
        return turns
            .iter()
            .map(|(key, scope)| {
                let got = scores.remove(key).ok_or_else(|| {
                    Error::CoverageMismatch(format!("no selection scores for {} turn {}", key.0, key.1))
                })?;
                if let Some(s) = scope {
                    let expected = s.resolve(&corpus.kb)?;
                    if let Some(miss) = expected.iter().map(|x| x.key()).find(|k| !got.contains_key(k)) {
                        return Err(Error::CoverageMismatch(format!(
                            "no score for {} turn {} candidate {miss}",
                            key.0, key.1
                        )));
                    }
                }
                let cands = got
                    .into_iter()
                    .map(|(key, score)| ScoredCandidate { key, score })
                    .collect();
                Ok(Ranking::new(key.0.clone(), key.1, cands))
            })
            .collect();
    }
    let scopes: BTreeSet<CandidateScope> = turns.iter().filter_map(|(_, s)| s.clone()).collect();
    let indexes = Indexes::build(&corpus.kb, &scopes, turns.iter().any(|(_, s)| s.is_none()))?;
    let params = sel.bm25();
    turns
        .par_iter()
        .map(|(key, scope)| {
            let d = corpus
                .dialogue(&key.0)
                .ok_or_else(|| Error::MissingData(format!("unknown dialogue `{}`", key.0)))?;
            let ctx = build_context(d, key.1, config.window)?;
            let index = indexes.get(scope.as_ref());
            match sel.method {
                SelectionMethod::Tfidf => Ok(score_tfidf(index, &ctx)),
                SelectionMethod::Bm25 => score_bm25(index, &ctx, params.k1, params.b),
                SelectionMethod::External => unreachable!("handled above"),
            }
        })
        .collect()
}

/// Rankings for every labeled knowledge-seeking turn, each within its
/// annotated scope.
pub fn rank_gold_turns(config: &PipelineConfig, corpus: &Corpus) -> Result<Vec<Ranking>> {
    let turns: Vec<(TurnKey, Option<CandidateScope>)> = corpus
        .gold_knowledge()
        .into_keys()
        .map(|k| {
            let s = corpus.gold_scope(&k);
            (k, s)
        })
        .collect();
    rank_turns(config, corpus, &turns)
}

/// Extractive responses from the selected knowledge of each ranking.
pub fn extract_responses(
    config: &PipelineConfig,
    corpus: &Corpus,
    rankings: &[Ranking],
) -> Result<Vec<GeneratedResponse>> {
    rankings
        .par_iter()
        .map(|r| {
            let keys = select(r, config.selection.policy())?;
            let snippets = keys
                .iter()
                .map(|k| corpus.kb.resolve(k, "extraction"))
                .collect::<Result<Vec<_>>>()?;
            extract_for_turn(&r.dialogue_id, r.turn_index, &snippets, config.seed)
        })
        .collect()
}

/// Output of [`run_end_to_end`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub predictions: Vec<PredictionRecord>,
    pub detections: Vec<DetectionPrediction>,
    /// One per detected turn.
    pub rankings: Vec<Ranking>,
}

/// Detection, then selection and response production for detected turns.
/// Output is sorted by turn key.
pub fn run_end_to_end(config: &PipelineConfig, corpus: &Corpus) -> Result<RunOutput> {
    config.validate_methods()?;
    let detections = detect(config, corpus)?;
    let mut turns = Vec::new();
    for p in detections.iter().filter(|p| p.predicted) {
        let key = p.key();
        let scope = corpus.gold_scope(&key);
        if scope.is_none() && config.selection.scope_fallback == ScopeFallback::Error {
            return Err(Error::UnknownScope(format!(
                "{} turn {} was detected but has no annotated scope",
                key.0, key.1
            )));
        }
        turns.push((key, scope));
    }
    let rankings = rank_turns(config, corpus, &turns)?;
    let responses: BTreeMap<TurnKey, String> = match config.generation.method {
        GenerationMethod::Extract => extract_responses(config, corpus, &rankings)?,
        GenerationMethod::External => {
            let path = config.paths.responses.as_deref().expect("validated");
            ingest_external_responses(path)?
        }
    }
    .into_iter()
    .map(|r| (r.key(), r.text))
    .collect();

    let unscoped: BTreeSet<&TurnKey> = turns.iter().filter(|(_, s)| s.is_none()).map(|(k, _)| k).collect();
    let by_turn: BTreeMap<TurnKey, &Ranking> = rankings
        .iter()
        .map(|r| ((r.dialogue_id.clone(), r.turn_index), r))
        .collect();
    let predictions = detections
        .iter()
        .map(|p| {
            let key = p.key();
            let Some(ranking) = by_turn.get(&key) else {
                return Ok(PredictionRecord::pass_through(&key));
            };
            let response = responses
                .get(&key)
                .cloned()
                .ok_or_else(|| Error::CoverageMismatch(format!("no response for detected {} turn {}", key.0, key.1)))?;
            let top = ranking.candidates().first().map_or(f64::NEG_INFINITY, |c| c.score);
            Ok(PredictionRecord {
                selected: select(ranking, config.selection.policy())?,
                response: Some(response),
                low_score: top <= config.selection.low_score,
                unscoped: unscoped.contains(&key),
                detected: true,
                dialogue_id: key.0,
                turn: key.1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput {
        predictions,
        detections,
        rankings,
    })
}

/// Gold labels copied into prediction form.
pub fn oracle_predictions(corpus: &Corpus) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for d in &corpus.dialogues {
        if d.labels.is_none() {
            return Err(Error::MissingData(format!(
                "dialogue `{}` has no labels",
                d.dialogue_id
            )));
        }
        for t in d.user_turns() {
            let key = (d.dialogue_id.clone(), t.index);
            match d.label(t.index).filter(|l| l.target) {
                Some(l) => out.push(PredictionRecord {
                    dialogue_id: key.0,
                    turn: key.1,
                    detected: true,
                    selected: l.knowledge_refs.clone(),
                    response: Some(l.gold_response.clone().unwrap_or_default()),
                    low_score: false,
                    unscoped: false,
                }),
                None => out.push(PredictionRecord::pass_through(&key)),
            }
        }
    }
    out.sort_by_key(PredictionRecord::key);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Detection,
    Selection,
    Generation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationReport>,
}

/// Scores the `selected` lists against every gold turn. A gold turn that
/// was not detected, or whose list holds no gold key, is a miss.
fn selection_from_predictions(predictions: &[PredictionRecord], golds: &GoldKnowledge) -> Result<SelectionReport> {
    let by_turn: BTreeMap<TurnKey, &PredictionRecord> = predictions.iter().map(|p| (p.key(), p)).collect();
    if golds.is_empty() {
        return Err(Error::MissingData("no labeled knowledge-seeking turns".into()));
    }
    let (mut mrr, mut r1, mut r5) = (0.0, 0.0, 0.0);
    for (key, gold) in golds {
        let rank = by_turn
            .get(key)
            .filter(|p| p.detected)
            .and_then(|p| p.selected.iter().position(|k| gold.contains(k)))
            .map(|i| i + 1);
        if let Some(r) = rank {
            if r <= 5 {
                mrr += 1.0 / r as f64;
                r5 += 1.0;
            }
            if r == 1 {
                r1 += 1.0;
            }
        }
    }
    let n = golds.len() as f64;
    Ok(SelectionReport {
        mrr_at_5: mrr / n,
        r_at_1: r1 / n,
        r_at_5: r5 / n,
        n_turns: golds.len(),
    })
}

fn check_unique(predictions: &[PredictionRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in predictions {
        if !seen.insert(p.key()) {
            return Err(Error::DuplicateRecord(format!(
                "prediction for {} turn {}",
                p.dialogue_id, p.turn
            )));
        }
    }
    Ok(())
}

/// Scores a prediction file. Selection is judged on the `selected` lists;
/// pass full rankings to [`crate::metrics::selection_report`] directly for MRR over whole
/// candidate lists. A target turn with no response is scored as an empty one.
pub fn evaluate(
    predictions: &[PredictionRecord],
    corpus: &Corpus,
    stages: &BTreeSet<Stage>,
) -> Result<EvaluationReport> {
    check_unique(predictions)?;
    let mut report = EvaluationReport::default();
    if stages.contains(&Stage::Detection) {
        report.detection = Some(detection_metrics(
            predictions.iter().map(|p| (p.key(), p.detected)),
            &corpus.dialogues,
        )?);
    }
    if stages.contains(&Stage::Selection) {
        let golds = corpus.gold_knowledge();
        report.selection = Some(selection_from_predictions(predictions, &golds)?);
    }
    if stages.contains(&Stage::Generation) {
        let mut texts: BTreeMap<TurnKey, String> = predictions
            .iter()
            .filter_map(|p| p.response.clone().map(|text| (p.key(), text)))
            .collect();
        for d in &corpus.dialogues {
            for l in d.targets() {
                texts.entry((d.dialogue_id.clone(), l.turn_index)).or_default();
            }
        }
        let responses: Vec<GeneratedResponse> = texts
            .into_iter()
            .map(|((dialogue_id, turn_index), text)| GeneratedResponse {
                dialogue_id,
                turn_index,
                text,
                source: None,
            })
            .collect();
        report.generation = Some(generation_report(&responses, &corpus.dialogues)?);
    }
    Ok(report)
}
