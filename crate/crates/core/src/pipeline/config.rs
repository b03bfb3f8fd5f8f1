use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_WINDOW;
use crate::detection::{DEFAULT_NEIGHBORS, DEFAULT_QUANTILE, EXTERNAL_THRESHOLD};
use crate::error::{Error, Result};
use crate::selection::{Bm25Params, SelectionPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMethod {
    #[default]
    Lof,
    External,
    /// Copies the gold labels; for debugging the later stages.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    #[default]
    Tfidf,
    Bm25,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMethod {
    #[default]
    Extract,
    External,
}

/// What to score a detected turn against when it has no gold annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeFallback {
    /// The whole knowledge base.
    #[default]
    All,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub method: DetectionMethod,
    pub k: usize,
    pub quantile: f64,
    /// Decision boundary for external probabilities.
    pub threshold: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            method: DetectionMethod::default(),
            k: DEFAULT_NEIGHBORS,
            quantile: DEFAULT_QUANTILE,
            threshold: EXTERNAL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub method: SelectionMethod,
    pub k1: f64,
    pub b: f64,
    /// When set, every candidate at or above this score is selected.
    pub min_score: Option<f64>,
    pub scope_fallback: ScopeFallback,
    /// Selections whose top score is at or below this are flagged.
    pub low_score: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        let bm25 = Bm25Params::default();
        SelectionConfig {
            method: SelectionMethod::default(),
            k1: bm25.k1,
            b: bm25.b,
            min_score: None,
            scope_fallback: ScopeFallback::default(),
            low_score: 0.0,
        }
    }
}

impl SelectionConfig {
    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.min_score.map_or(SelectionPolicy::Top1, SelectionPolicy::Threshold)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub method: GenerationMethod,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub knowledge: Option<PathBuf>,
    pub logs: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Utterance vectors of the turns to classify.
    pub vectors: Option<PathBuf>,
    /// Vectors to fit the outlier model on; defaults to `vectors`.
    pub lof_train_vectors: Option<PathBuf>,
    pub detection_scores: Option<PathBuf>,
    pub selection_scores: Option<PathBuf>,
    pub responses: Option<PathBuf>,
}

impl Paths {
    fn all_mut(&mut self) -> [&mut Option<PathBuf>; 8] {
        [
            &mut self.knowledge,
            &mut self.logs,
            &mut self.labels,
            &mut self.vectors,
            &mut self.lof_train_vectors,
            &mut self.detection_scores,
            &mut self.selection_scores,
            &mut self.responses,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window: usize,
    pub seed: u64,
    pub detection: DetectionConfig,
    pub selection: SelectionConfig,
    pub generation: GenerationConfig,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: DEFAULT_WINDOW,
            seed: 0,
            detection: DetectionConfig::default(),
            selection: SelectionConfig::default(),
            generation: GenerationConfig::default(),
            paths: Paths::default(),
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{what} is required")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{what} `{}` does not exist", p.display())));
    }
    Ok(p)
}

fn optional<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<Option<&'a Path>> {
    match p {
        Some(_) => require(p, what).map(Some),
        None => Ok(None),
    }
}

impl PipelineConfig {
    /// Reads a TOML file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            for p in config.paths.all_mut().into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// [`Self::validate_methods`] plus the corpus files.
    pub fn validate(&self) -> Result<()> {
        self.validate_methods()?;
        require(&self.paths.knowledge, "paths.knowledge")?;
        require(&self.paths.logs, "paths.logs")?;
        optional(&self.paths.labels, "paths.labels")?;
        Ok(())
    }

    /// Checks parameter ranges and that every input the chosen methods need
    /// is present, before any processing.
    pub fn validate_methods(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        let d = &self.detection;
        if d.k == 0 {
            return Err(Error::Config("detection.k must be at least 1".into()));
        }
        if !(d.quantile > 0.0 && d.quantile < 1.0) {
            return Err(Error::Config(format!(
                "detection.quantile = {} outside (0, 1)",
                d.quantile
            )));
        }
        if !(0.0..=1.0).contains(&d.threshold) {
            return Err(Error::Config(format!(
                "detection.threshold = {} outside [0, 1]",
                d.threshold
            )));
        }
        self.selection
            .bm25()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.selection.min_score.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Config("selection.min_score must be finite".into()));
        }
        let p = &self.paths;
        match d.method {
            DetectionMethod::Lof => {
                optional(&p.vectors, "paths.vectors")?;
                optional(&p.lof_train_vectors, "paths.lof_train_vectors")?;
            }
            DetectionMethod::External => {
                require(&p.detection_scores, "paths.detection_scores (external detection)")?;
            }
            DetectionMethod::Oracle => {}
        }
        if self.selection.method == SelectionMethod::External {
            require(&p.selection_scores, "paths.selection_scores (external selection)")?;
        }
        if self.generation.method == GenerationMethod::External {
            require(&p.responses, "paths.responses (external generation)")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(
            &cfg,
            "window = 3\n[selection]\nmethod = \"bm25\"\nk1 = 1.5\n[paths]\nknowledge = \"kb.json\"\n",
        )
        .unwrap();
        let c = PipelineConfig::from_toml_file(&cfg).unwrap();
        assert_eq!(c.window, 3);
        assert_eq!(c.selection.method, SelectionMethod::Bm25);
        assert_eq!(c.selection.k1, 1.5);
        assert_eq!(c.selection.b, 0.75);
        assert_eq!(c.detection.k, 20);
        assert_eq!(c.paths.knowledge, Some(dir.path().join("kb.json")));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "[selection]\nmethd = \"bm25\"\n").unwrap();
        assert!(matches!(PipelineConfig::from_toml_file(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn external_modes_need_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let kb = dir.path().join("kb.json");
        std::fs::write(&kb, "{}").unwrap();
        let mut c = PipelineConfig::default();
        c.paths.knowledge = Some(kb.clone());
        c.paths.logs = Some(kb);
        c.validate().unwrap();
        c.selection.method = SelectionMethod::External;
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("selection_scores")));
        c.selection.method = SelectionMethod::Tfidf;
        c.detection.method = DetectionMethod::External;
        assert!(c.validate().is_err());
        c.detection.method = DetectionMethod::Lof;
        c.generation.method = GenerationMethod::External;
        assert!(c.validate().is_err());
        c.generation.method = GenerationMethod::Extract;
        c.selection.b = 2.0;
        assert!(c.validate().is_err());
    }
}
