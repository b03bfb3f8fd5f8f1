use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use knowdial::corpus::{corpus_stats, domain_stats};
use knowdial::generation::{ingest_external_responses, GeneratedResponse};
use knowdial::io;
use knowdial::metrics::{generation_report, human_eval_majority, load_votes, selection_report};
use knowdial::pipeline::{
    detect, evaluate, example_fixture, extract_responses, make_fixture, rank_gold_turns, run_end_to_end, write_fixture,
    Corpus, DetectionMethod, FixtureSizes, GenerationMethod, PipelineConfig, PredictionRecord, SelectionMethod, Stage,
};
use knowdial::selection::{prep_negatives, Ranking, DEFAULT_NEGATIVES};

/// Knowledge-seeking turn detection, knowledge selection and grounded
/// response baselines, with evaluation.
#[derive(Parser)]
#[command(name = "knowdial", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and cross-check the corpus files.
    Validate(CorpusArgs),
    /// Dialogue and knowledge counts as JSON.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify every user turn as knowledge-seeking or not.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        detection: DetectionArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank the candidates of every labeled knowledge-seeking turn within its annotated scope.
    Select {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        selection: SelectionArgs,
        /// Keep only the first N candidates of each ranking.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer extraction from the selected snippet of each ranking.
    Extract {
        #[command(flatten)]
        common: CommonArgs,
        /// Rankings written by `select`.
        #[arg(long)]
        rankings: PathBuf,
        /// Select every candidate scoring at least this, instead of the top one.
        #[arg(long)]
        min_score: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Negative candidates for training a relevance classifier.
    PrepNegatives {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Negatives per positive.
        #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection, selection and response production for every user turn.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        detection: DetectionArgs,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long, value_enum)]
        generation: Option<GenerationArg>,
        /// External responses, one per detected turn.
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long)]
        min_score: Option<f64>,
        /// Also write the ranking of every detected turn here.
        #[arg(long)]
        rankings_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions, rankings, responses or preference votes.
    Evaluate(EvaluateArgs),
    /// Write a synthetic corpus.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        domains: usize,
        #[arg(long, default_value_t = 3)]
        entities: usize,
        #[arg(long, default_value_t = 4)]
        docs: usize,
        #[arg(long, default_value_t = 2)]
        faqs: usize,
        #[arg(long, default_value_t = 10)]
        dialogues: usize,
        #[arg(long, default_value_t = 2)]
        targets: usize,
        /// Write the fixed 16-turn example conversation instead.
        #[arg(long)]
        example: bool,
    },
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    knowledge: PathBuf,
    #[arg(long)]
    logs: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        let mut c = PipelineConfig::default();
        c.paths.knowledge = Some(self.knowledge.clone());
        c.paths.logs = Some(self.logs.clone());
        c.paths.labels = self.labels.clone();
        load_configured(&c)
    }
}

/// A config file plus the flags that override it.
#[derive(Args)]
struct CommonArgs {
    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Context window in turns.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectionArg {
    Lof,
    External,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    Tfidf,
    Bm25,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenerationArg {
    Extract,
    External,
}

#[derive(Args)]
struct DetectionArgs {
    #[arg(long, value_enum)]
    detection: Option<DetectionArg>,
    /// Utterance vectors of the turns to classify.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Vectors to fit the outlier model on.
    #[arg(long)]
    lof_train_vectors: Option<PathBuf>,
    /// External classifier probabilities.
    #[arg(long)]
    detection_scores: Option<PathBuf>,
    /// LOF neighborhood size.
    #[arg(long)]
    k: Option<usize>,
    /// Quantile of training LOF scores used as threshold.
    #[arg(long)]
    quantile: Option<f64>,
    /// Decision boundary for external probabilities.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct SelectionArgs {
    #[arg(long, value_enum)]
    selection: Option<SelectionArg>,
    /// External per-candidate probabilities.
    #[arg(long)]
    selection_scores: Option<PathBuf>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    knowledge: Option<PathBuf>,
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Prediction file written by `run`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Stages to score from the prediction file.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [StageArg::Detection, StageArg::Selection, StageArg::Generation])]
    stages: Vec<StageArg>,
    /// Rankings written by `select`.
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// Responses from `extract` or an external generator.
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Pairwise preference votes.
    #[arg(long)]
    votes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Detection,
    Selection,
    Generation,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: &Option<PathBuf>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

impl CommonArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_toml_file(p)?,
            None => PipelineConfig::default(),
        };
        set_path(&mut c.paths.knowledge, &self.knowledge);
        set_path(&mut c.paths.logs, &self.logs);
        set_path(&mut c.paths.labels, &self.labels);
        set(&mut c.window, self.window);
        set(&mut c.seed, self.seed);
        Ok(c)
    }
}

impl DetectionArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(
            &mut c.detection.method,
            self.detection.map(|m| match m {
                DetectionArg::Lof => DetectionMethod::Lof,
                DetectionArg::External => DetectionMethod::External,
                DetectionArg::Oracle => DetectionMethod::Oracle,
            }),
        );
        set_path(&mut c.paths.vectors, &self.vectors);
        set_path(&mut c.paths.lof_train_vectors, &self.lof_train_vectors);
        set_path(&mut c.paths.detection_scores, &self.detection_scores);
        set(&mut c.detection.k, self.k);
        set(&mut c.detection.quantile, self.quantile);
        set(&mut c.detection.threshold, self.threshold);
    }
}

impl SelectionArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(
            &mut c.selection.method,
            self.selection.map(|m| match m {
                SelectionArg::Tfidf => SelectionMethod::Tfidf,
                SelectionArg::Bm25 => SelectionMethod::Bm25,
                SelectionArg::External => SelectionMethod::External,
            }),
        );
        set_path(&mut c.paths.selection_scores, &self.selection_scores);
        set(&mut c.selection.k1, self.k1);
        set(&mut c.selection.b, self.b);
    }
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn emit_jsonl<T: Serialize>(out: &Option<PathBuf>, records: &[T]) -> Result<()> {
    let mut w = open_out(out)?;
    io::write_jsonl_to(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_configured(c: &PipelineConfig) -> Result<Corpus> {
    c.validate()?;
    Ok(Corpus::from_config(c)?)
}

#[derive(Serialize)]
struct StatsOutput {
    corpus: knowdial::corpus::CorpusStats,
    domains: Vec<knowdial::corpus::DomainStats>,
}

#[derive(Serialize, Default)]
struct EvaluateOutput {
    #[serde(flatten)]
    predictions: knowdial::pipeline::EvaluationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    rankings: Option<knowdial::metrics::SelectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    responses: Option<knowdial::metrics::GenerationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    human: Option<knowdial::metrics::HumanEvalReport>,
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let needs_corpus = a.predictions.is_some() || a.rankings.is_some() || a.responses.is_some();
    if !needs_corpus && a.votes.is_none() {
        anyhow::bail!(knowdial::Error::Config(
            "nothing to evaluate: give --predictions, --rankings, --responses or --votes".into()
        ));
    }
    let corpus = if needs_corpus {
        let (Some(k), Some(l)) = (&a.knowledge, &a.logs) else {
            anyhow::bail!(knowdial::Error::Config("--knowledge and --logs are required".into()));
        };
        if a.labels.is_none() {
            anyhow::bail!(knowdial::Error::Config("--labels is required for evaluation".into()));
        }
        Some(Corpus::load(k, l, a.labels.as_deref())?)
    } else {
        None
    };
    let mut out = EvaluateOutput::default();
    if let (Some(p), Some(corpus)) = (&a.predictions, &corpus) {
        let preds: Vec<PredictionRecord> = io::read_jsonl(p)?;
        let stages: BTreeSet<Stage> = a
            .stages
            .iter()
            .map(|s| match s {
                StageArg::Detection => Stage::Detection,
                StageArg::Selection => Stage::Selection,
                StageArg::Generation => Stage::Generation,
            })
            .collect();
        out.predictions = evaluate(&preds, corpus, &stages)?;
    }
    if let (Some(p), Some(corpus)) = (&a.rankings, &corpus) {
        let rankings: Vec<Ranking> = io::read_jsonl(p)?;
        out.rankings = Some(selection_report(&rankings, &corpus.gold_knowledge())?);
    }
    if let (Some(p), Some(corpus)) = (&a.responses, &corpus) {
        let responses: Vec<GeneratedResponse> = ingest_external_responses(p)?;
        out.responses = Some(generation_report(&responses, &corpus.dialogues)?);
    }
    if let Some(p) = &a.votes {
        out.human = Some(human_eval_majority(&load_votes(p)?)?);
    }
    emit_json(&a.out, &out)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(corpus) => {
            let c = corpus.load()?;
            let labeled = c.dialogues.iter().filter(|d| d.labels.is_some()).count();
            eprintln!(
                "ok: {} snippets, {} dialogues ({labeled} labeled)",
                c.kb.len(),
                c.dialogues.len()
            );
            Ok(())
        }
        Command::Stats { corpus, out } => {
            let c = corpus.load()?;
            emit_json(
                &out,
                &StatsOutput {
                    corpus: corpus_stats(&c.kb, &c.dialogues),
                    domains: domain_stats(&c.kb),
                },
            )
        }
        Command::Detect { common, detection, out } => {
            let mut c = common.config()?;
            detection.apply(&mut c);
            let corpus = load_configured(&c)?;
            emit_jsonl(&out, &detect(&c, &corpus)?)
        }
        Command::Select {
            common,
            selection,
            top,
            out,
        } => {
            let mut c = common.config()?;
            selection.apply(&mut c);
            let corpus = load_configured(&c)?;
            let mut rankings = rank_gold_turns(&c, &corpus)?;
            if let Some(n) = top {
                rankings.iter_mut().for_each(|r| r.truncate(n));
            }
            emit_jsonl(&out, &rankings)
        }
        Command::Extract {
            common,
            rankings,
            min_score,
            out,
        } => {
            let mut c = common.config()?;
            set(&mut c.selection.min_score, min_score.map(Some));
            let corpus = load_configured(&c)?;
            let rankings: Vec<Ranking> = io::read_jsonl(&rankings)?;
            emit_jsonl(&out, &extract_responses(&c, &corpus, &rankings)?)
        }
        Command::PrepNegatives { corpus, m, seed, out } => {
            let c = corpus.load()?;
            let (records, short) = prep_negatives(&c.kb, &c.dialogues, m, seed)?;
            if short > 0 {
                eprintln!(
                    "warning: {short} of {} positives have fewer than {m} negatives in scope",
                    records.len()
                );
            }
            emit_jsonl(&out, &records)
        }
        Command::Run {
            common,
            detection,
            selection,
            generation,
            responses,
            min_score,
            rankings_out,
            out,
        } => {
            let mut c = common.config()?;
            detection.apply(&mut c);
            selection.apply(&mut c);
            set(
                &mut c.generation.method,
                generation.map(|g| match g {
                    GenerationArg::Extract => GenerationMethod::Extract,
                    GenerationArg::External => GenerationMethod::External,
                }),
            );
            set_path(&mut c.paths.responses, &responses);
            set(&mut c.selection.min_score, min_score.map(Some));
            let corpus = load_configured(&c)?;
            let result = run_end_to_end(&c, &corpus)?;
            if let Some(p) = &rankings_out {
                io::write_jsonl(p, &result.rankings)?;
            }
            emit_jsonl(&out, &result.predictions)
        }
        Command::Evaluate(args) => evaluate_cmd(&args),
        Command::MakeFixture {
            out,
            seed,
            domains,
            entities,
            docs,
            faqs,
            dialogues,
            targets,
            example,
        } => {
            let (kb, d) = if example {
                example_fixture()
            } else {
                make_fixture(
                    seed,
                    FixtureSizes {
                        domains,
                        entities_per_domain: entities,
                        docs_per_entity: docs,
                        faqs_per_domain: faqs,
                        dialogues,
                        targets_per_dialogue: targets,
                    },
                )?
            };
            write_fixture(&out, &kb, &d)?;
            eprintln!(
                "wrote {} snippets and {} dialogues to {}",
                kb.len(),
                d.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<knowdial::Error>() {
        Some(e) => e.exit_code() as u8,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<knowdial::Error>() {
                Some(k) => eprintln!("error: {k}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
