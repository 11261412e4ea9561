//! The TOML run configuration read by the command-line tool.
//!
//! Every section is optional; missing keys take their defaults. Relative
//! paths are resolved against the directory of the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::ClassifierParams;
use crate::corpus::{ColumnMap, CorpusFormat};
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::metrics::BleuConfig;
use crate::models::{DEFAULT_BUCKETS, DEFAULT_DELTA};
use crate::rerank::{CandidateConfig, FactorMask};
use crate::train::TrainConfig;

/// Whether generation is conditioned on the gold strategy labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Unconstrained,
    Controlled,
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unconstrained" => Ok(Setting::Unconstrained),
            "controlled" => Ok(Setting::Controlled),
            other => Err(Error::Config(format!("unknown setting {other:?}"))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Unconstrained => "unconstrained",
            Setting::Controlled => "controlled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub dir: PathBuf,
    pub format: CorpusFormat,
    pub columns: ColumnMap,
    pub min_count: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            dir: PathBuf::from("data/toy"),
            format: CorpusFormat::Csv,
            columns: ColumnMap::default(),
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Tabular softmax policy trained with the combined objective.
    Policy,
    /// Count-based conditional model; not trainable by gradient.
    Ngram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub buckets: usize,
    pub order: usize,
    pub delta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Policy,
            buckets: DEFAULT_BUCKETS,
            order: 3,
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    pub delta: f64,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            order: 3,
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    /// When false, the output is the single `[decode]` generation.
    pub enabled: bool,
    pub normalized_fluency: bool,
    pub factors: FactorMask,
    pub bleu: BleuConfig,
}

impl Default for RerankSection {
    fn default() -> Self {
        RerankSection {
            enabled: true,
            normalized_fluency: true,
            factors: FactorMask::default(),
            bleu: BleuConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub setting: Setting,
    pub seed: u64,
    /// Seeds averaged over by `ablate`.
    pub seeds: Vec<u64>,
    pub artifacts: PathBuf,
    pub lexicon: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            setting: Setting::Controlled,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            artifacts: PathBuf::from("artifacts"),
            lexicon: PathBuf::from("data/lexicon.tsv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub lm: LmSection,
    pub train: TrainConfig,
    pub classifier: ClassifierParams,
    pub decode: DecodeConfig,
    pub candidates: CandidateConfig,
    pub rerank: RerankSection,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.corpus.dir,
            &mut self.run.artifacts,
            &mut self.run.lexicon,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Overrides every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.train.seed = seed;
        self.classifier.seed = seed;
        self.decode.seed = seed;
        self.candidates.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.decode.validate()?;
        self.candidates.validate()?;
        if self.model.buckets == 0 {
            return Err(Error::Config("model.buckets must be >= 1".into()));
        }
        crate::models::check_smoothing(self.model.order, self.model.delta)?;
        crate::models::check_smoothing(self.lm.order, self.lm.delta)?;
        if self.classifier.dim == 0 || self.classifier.epochs == 0 {
            return Err(Error::Config(
                "classifier dim and epochs must be >= 1".into(),
            ));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::DecodeMethod;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.decode.method = DecodeMethod::TopP(0.9);
        cfg.model.kind = ModelKind::Ngram;
        cfg.run.setting = Setting::Unconstrained;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections() {
        let cfg = RunConfig::from_toml(
            "[train]\nepochs = 3\n[train.weights]\nbeta = 0.0\n[decode]\nmethod = { beam = 4 }\n[run]\nsetting = \"unconstrained\"\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.weights.beta, 0.0);
        assert_eq!(cfg.train.weights.alpha, 1.0);
        assert_eq!(cfg.decode.method, DecodeMethod::Beam(4));
        assert_eq!(cfg.run.setting, Setting::Unconstrained);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[train.weights]\nalpha = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[model]\norder = 0\n").is_err());
        assert!(RunConfig::from_toml("[nonsense]\n").is_err());
        assert!(RunConfig::from_toml("[decode]\nmethod = { top_p = 1.5 }\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[corpus]\ndir = \"data\"\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.corpus.dir, dir.path().join("data"));
    }
}
