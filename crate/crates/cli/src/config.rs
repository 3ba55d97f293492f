//! Experiment configuration files: `key = value` lines, `#` comments.
//!
//! Every key has a default, so an empty file resolves to the full-size model
//! with no data paths. Relative paths are taken relative to the file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use duet::baselines::Bm25Params;
use duet::corpus::NegativeMode;
use duet::models::{ModelConfig, ModelKind};
use duet::trainer::TrainConfig;

use crate::failure::{data, usage, Failure};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bm25: Bm25Params,
    pub ql_mu: f64,
    pub documents: Option<PathBuf>,
    pub train_queries: Option<PathBuf>,
    pub train_qrels: Option<PathBuf>,
    pub validation_queries: Option<PathBuf>,
    pub validation_qrels: Option<PathBuf>,
    pub validation_candidates: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        ExperimentConfig {
            train: TrainConfig {
                dropout: model.dropout,
                ..TrainConfig::default()
            },
            model,
            bm25: Bm25Params::default(),
            ql_mu: 1500.0,
            documents: None,
            train_queries: None,
            train_qrels: None,
            validation_queries: None,
            validation_qrels: None,
            validation_candidates: None,
            vocab: None,
            output_dir: None,
        }
    }
}

/// Every recognised key, in the order they are written.
pub const KEYS: &[&str] = &[
    "query_len",
    "doc_len",
    "local_filters",
    "vocab_size",
    "max_ngraph",
    "conv_window",
    "dist_filters",
    "doc_pool",
    "hidden",
    "dropout",
    "numneg",
    "mode",
    "negatives",
    "learning_rate",
    "minibatch",
    "epochs",
    "seed",
    "max_instances",
    "checkpoint_every",
    "bm25_k1",
    "bm25_b",
    "ql_mu",
    "documents",
    "train_queries",
    "train_qrels",
    "validation_queries",
    "validation_qrels",
    "validation_candidates",
    "vocab",
    "output_dir",
];

/// Keys that affect the trained parameters; their text is the checkpoint
/// digest input.
const MODEL_KEYS: usize = 19;

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Failure> {
    value
        .parse()
        .map_err(|_| usage(format!("config key {key}: invalid value {value:?}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, Failure> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".to_string(), T::to_string)
}

impl ExperimentConfig {
    /// The smaller model used for quick experiments and tests.
    pub fn desk() -> Self {
        let base = ExperimentConfig::default();
        ExperimentConfig {
            model: ModelConfig::desk(),
            train: TrainConfig {
                epochs: 20,
                ..base.train.clone()
            },
            ..base
        }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| data(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = ExperimentConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    i + 1
                )));
            };
            cfg.set(key.trim(), value.trim(), base)?;
        }
        Ok(cfg)
    }

    /// Sets one key; relative paths are joined onto `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), Failure> {
        let path = |v: &str| -> Option<PathBuf> {
            (v != "none").then(|| {
                let p = PathBuf::from(v);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            })
        };
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "query_len" => m.query_len = parse(key, value)?,
            "doc_len" => m.doc_len = parse(key, value)?,
            "local_filters" => m.local_filters = parse(key, value)?,
            "vocab_size" => m.vocab_size = parse(key, value)?,
            "max_ngraph" => m.max_ngraph = parse(key, value)?,
            "conv_window" => m.conv_window = parse(key, value)?,
            "dist_filters" => m.dist_filters = parse(key, value)?,
            "doc_pool" => m.doc_pool = parse(key, value)?,
            "hidden" => m.hidden = parse(key, value)?,
            "dropout" => {
                m.dropout = parse(key, value)?;
                t.dropout = m.dropout;
            }
            "numneg" => m.numneg = parse(key, value)?,
            "mode" => t.mode = parse(key, value)?,
            "negatives" => t.negatives = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "minibatch" => t.minibatch = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "max_instances" => t.max_instances = parse_opt(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_opt(key, value)?,
            "bm25_k1" => self.bm25.k1 = parse(key, value)?,
            "bm25_b" => self.bm25.b = parse(key, value)?,
            "ql_mu" => self.ql_mu = parse(key, value)?,
            "documents" => self.documents = path(value),
            "train_queries" => self.train_queries = path(value),
            "train_qrels" => self.train_qrels = path(value),
            "validation_queries" => self.validation_queries = path(value),
            "validation_qrels" => self.validation_qrels = path(value),
            "validation_candidates" => self.validation_candidates = path(value),
            "vocab" => self.vocab = path(value),
            "output_dir" => self.output_dir = path(value),
            _ => return Err(usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), Failure> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| usage(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim(), Path::new(""))?;
        }
        Ok(())
    }

    fn value(&self, key: &str) -> String {
        let m = &self.model;
        let t = &self.train;
        let p = |v: &Option<PathBuf>| {
            v.as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        };
        match key {
            "query_len" => m.query_len.to_string(),
            "doc_len" => m.doc_len.to_string(),
            "local_filters" => m.local_filters.to_string(),
            "vocab_size" => m.vocab_size.to_string(),
            "max_ngraph" => m.max_ngraph.to_string(),
            "conv_window" => m.conv_window.to_string(),
            "dist_filters" => m.dist_filters.to_string(),
            "doc_pool" => m.doc_pool.to_string(),
            "hidden" => m.hidden.to_string(),
            "dropout" => t.dropout.to_string(),
            "numneg" => m.numneg.to_string(),
            "mode" => t.mode.to_string(),
            "negatives" => t.negatives.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "minibatch" => t.minibatch.to_string(),
            "epochs" => t.epochs.to_string(),
            "seed" => t.seed.to_string(),
            "max_instances" => show_opt(&t.max_instances),
            "checkpoint_every" => show_opt(&t.checkpoint_every),
            "bm25_k1" => self.bm25.k1.to_string(),
            "bm25_b" => self.bm25.b.to_string(),
            "ql_mu" => self.ql_mu.to_string(),
            "documents" => p(&self.documents),
            "train_queries" => p(&self.train_queries),
            "train_qrels" => p(&self.train_qrels),
            "validation_queries" => p(&self.validation_queries),
            "validation_qrels" => p(&self.validation_qrels),
            "validation_candidates" => p(&self.validation_candidates),
            "vocab" => p(&self.vocab),
            "output_dir" => p(&self.output_dir),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.value(k));
        }
        out
    }

    /// Only the keys that determine the trained parameters, so moving data
    /// files or the output directory leaves the digest unchanged.
    pub fn model_text(&self) -> String {
        let mut out = String::new();
        for k in &KEYS[..MODEL_KEYS] {
            let _ = writeln!(out, "{k} = {}", self.value(k));
        }
        out
    }

    /// The model config with dropout taken from training.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dropout: self.train.dropout,
            ..self.model
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.train.mode
    }

    pub fn negatives(&self) -> NegativeMode {
        self.train.negatives
    }

    pub fn require(&self, field: &Option<PathBuf>, key: &str) -> Result<PathBuf, Failure> {
        field
            .clone()
            .ok_or_else(|| usage(format!("config key {key} is required")))
    }
}
