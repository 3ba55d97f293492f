//! The local (exact-match) subnetwork, the distributed (n-graph embedding)
//! subnetwork, and their sum.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{glorot_uniform, AutodiffError, Mode, ParamSet, Real, Tape, Tensor, Var};
use crate::corpus::{Document, TermSequence};
use crate::featurize::{interaction_matrix, ngraph_matrix, NGraphMatrix, NGraphVocabulary};
use crate::run::Run;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("vocabulary has {found} n-graphs but the model expects {expected}")]
    VocabMismatch { expected: usize, found: usize },
    #[error("input shape {found:?} does not match config, expected {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Which subnetworks a model instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Duet,
    LocalOnly,
    DistributedOnly,
}

impl ModelKind {
    pub fn has_local(self) -> bool {
        matches!(self, ModelKind::Duet | ModelKind::LocalOnly)
    }

    pub fn has_distributed(self) -> bool {
        matches!(self, ModelKind::Duet | ModelKind::DistributedOnly)
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duet" => Ok(ModelKind::Duet),
            "local" | "local-only" => Ok(ModelKind::LocalOnly),
            "distributed" | "distributed-only" => Ok(ModelKind::DistributedOnly),
            other => Err(format!(
                "unknown model mode {other:?} (expected duet|local|distributed)"
            )),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Duet => "duet",
            ModelKind::LocalOnly => "local",
            ModelKind::DistributedOnly => "distributed",
        })
    }
}

/// Architecture dimensions. Defaults are the full-size model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub query_len: usize,
    pub doc_len: usize,
    pub local_filters: usize,
    pub vocab_size: usize,
    pub max_ngraph: usize,
    pub conv_window: usize,
    pub dist_filters: usize,
    pub doc_pool: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub numneg: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            query_len: 10,
            doc_len: 1000,
            local_filters: 300,
            vocab_size: 2000,
            max_ngraph: 5,
            conv_window: 3,
            dist_filters: 300,
            doc_pool: 100,
            hidden: 300,
            dropout: 0.20,
            numneg: 4,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for quick experiments: 100-term documents, a
    /// 200-entry n-graph vocabulary, 32 filters and hidden units, pool 10.
    pub fn desk() -> Self {
        ModelConfig {
            doc_len: 100,
            local_filters: 32,
            vocab_size: 200,
            dist_filters: 32,
            doc_pool: 10,
            hidden: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("query_len", self.query_len),
            ("doc_len", self.doc_len),
            ("local_filters", self.local_filters),
            ("vocab_size", self.vocab_size),
            ("max_ngraph", self.max_ngraph),
            ("conv_window", self.conv_window),
            ("dist_filters", self.dist_filters),
            ("doc_pool", self.doc_pool),
            ("hidden", self.hidden),
            ("numneg", self.numneg),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.query_len < self.conv_window || self.doc_len < self.conv_window {
            return Err(ModelError::Config(format!(
                "query_len and doc_len must be at least conv_window {}",
                self.conv_window
            )));
        }
        if self.doc_len + 2 < self.conv_window + self.doc_pool {
            return Err(ModelError::Config(format!(
                "doc_len {} too short for conv_window {} and doc_pool {}",
                self.doc_len, self.conv_window, self.doc_pool
            )));
        }
        Ok(())
    }

    /// Query positions after the n-graph convolution.
    pub fn query_conv_len(&self) -> usize {
        self.query_len - self.conv_window + 1
    }

    pub fn doc_conv_len(&self) -> usize {
        self.doc_len - self.conv_window + 1
    }

    /// Document span embeddings after window pooling.
    pub fn doc_spans(&self) -> usize {
        self.doc_conv_len() - self.doc_pool + 1
    }

    /// `(name, shape, fan_in, fan_out)` for every parameter of `kind`.
    pub fn param_specs(&self, kind: ModelKind) -> Vec<(String, Vec<usize>, usize, usize)> {
        let mut specs = Vec::new();
        let mut dense = |prefix: &str, n_in: usize, n_out: usize| {
            specs.push((format!("{prefix}.weight"), vec![n_in, n_out], n_in, n_out));
            specs.push((format!("{prefix}.bias"), vec![n_out], n_in, n_out));
        };
        let (h, f, w) = (self.hidden, self.dist_filters, self.conv_window);
        if kind.has_local() {
            let c = self.local_filters;
            dense("local.fc1", c * self.query_len, h);
            dense("local.fc2", h, h);
            dense("local.out", h, 1);
        }
        if kind.has_distributed() {
            dense("dist.query_fc", f, f);
            dense("dist.fc1", f * self.doc_spans(), h);
            dense("dist.fc2", h, h);
            dense("dist.out", h, 1);
        }
        let mut conv = |prefix: &str, channels: usize, width: usize, filters: usize| {
            specs.push((
                format!("{prefix}.weight"),
                vec![channels, width, filters],
                channels * width,
                filters,
            ));
            specs.push((
                format!("{prefix}.bias"),
                vec![filters],
                channels * width,
                filters,
            ));
        };
        if kind.has_local() {
            conv("local.conv", self.doc_len, 1, self.local_filters);
        }
        if kind.has_distributed() {
            conv("dist.query_conv", self.vocab_size, w, f);
            conv("dist.doc_conv", self.vocab_size, w, f);
            conv("dist.doc_proj", f, 1, f);
        }
        specs.sort_by(|a, b| a.0.cmp(&b.0));
        specs
    }
}

/// Featurized query: its padded terms and n-graph counts.
#[derive(Debug, Clone)]
pub struct QueryInput {
    pub terms: TermSequence,
    pub ngraphs: NGraphMatrix,
}

/// Featurized document.
#[derive(Debug, Clone)]
pub struct DocInput {
    pub terms: TermSequence,
    pub ngraphs: NGraphMatrix,
}

/// Turns token lists into model inputs under one vocabulary and config.
#[derive(Debug, Clone, Copy)]
pub struct Featurizer<'v> {
    pub vocab: &'v NGraphVocabulary,
    pub query_len: usize,
    pub doc_len: usize,
}

impl<'v> Featurizer<'v> {
    pub fn new(vocab: &'v NGraphVocabulary, config: &ModelConfig) -> Self {
        Featurizer {
            vocab,
            query_len: config.query_len,
            doc_len: config.doc_len,
        }
    }

    pub fn query(&self, tokens: &[String]) -> QueryInput {
        self.query_terms(TermSequence::new(tokens, self.query_len))
    }

    pub fn query_terms(&self, terms: TermSequence) -> QueryInput {
        let ngraphs = ngraph_matrix(&terms, self.vocab);
        QueryInput { terms, ngraphs }
    }

    pub fn doc(&self, tokens: &[String]) -> DocInput {
        self.doc_terms(TermSequence::new(tokens, self.doc_len))
    }

    pub fn doc_terms(&self, terms: TermSequence) -> DocInput {
        let ngraphs = ngraph_matrix(&terms, self.vocab);
        DocInput { terms, ngraphs }
    }
}

/// Records intermediate tensor shapes of one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShapeTrace {
    pub entries: Vec<(&'static str, Vec<usize>)>,
}

impl ShapeTrace {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| s.as_slice())
    }
}

/// Per-branch scores of one query-document pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub local: Option<f64>,
    pub distributed: Option<f64>,
}

impl PairScores {
    /// The duet score: the sum of the branches present.
    pub fn total(&self) -> f64 {
        self.local.unwrap_or(0.0) + self.distributed.unwrap_or(0.0)
    }
}

/// A model: architecture, which branches exist, and their parameters.
#[derive(Debug, Clone)]
pub struct DuetModel<T: Real = f32> {
    pub config: ModelConfig,
    pub kind: ModelKind,
    pub params: ParamSet<T>,
}

impl<T: Real> DuetModel<T> {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(config: ModelConfig, kind: ModelKind, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, fan_in, fan_out) in config.param_specs(kind) {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                glorot_uniform(&shape, fan_in, fan_out, &mut rng)
            };
            params.insert(name, t);
        }
        Ok(DuetModel {
            config,
            kind,
            params,
        })
    }

    /// Wraps existing parameters after checking every expected tensor is
    /// present with the shape the config implies.
    pub fn from_params(
        config: ModelConfig,
        kind: ModelKind,
        params: ParamSet<T>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = config.param_specs(kind);
        for (name, shape, _, _) in &specs {
            let t = params
                .get(name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                if name == "dist.query_conv.weight" || name == "dist.doc_conv.weight" {
                    return Err(ModelError::VocabMismatch {
                        expected: config.vocab_size,
                        found: t.shape()[0],
                    });
                }
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if params.len() != specs.len() {
            return Err(ModelError::Config(format!(
                "{} parameters present, {} expected for a {} model",
                params.len(),
                specs.len(),
                kind
            )));
        }
        Ok(DuetModel {
            config,
            kind,
            params,
        })
    }

    /// Checks that `vocab` matches the model's n-graph input dimension.
    pub fn check_vocab(&self, vocab: &NGraphVocabulary) -> Result<(), ModelError> {
        if self.kind.has_distributed() && vocab.len() != self.config.vocab_size {
            return Err(ModelError::VocabMismatch {
                expected: self.config.vocab_size,
                found: vocab.len(),
            });
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> DuetModel<U> {
        DuetModel {
            config: self.config,
            kind: self.kind,
            params: self.params.cast(),
        }
    }

    /// Eval-mode scores of one pair, computed on a throwaway tape.
    pub fn score(&self, query: &QueryInput, doc: &DocInput) -> Result<PairScores, ModelError> {
        let mut tape = Tape::with_shared_params(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let local = if self.kind.has_local() {
            let v = local_score(
                &mut tape,
                &self.config,
                query,
                doc,
                Mode::Eval,
                &mut rng,
                None,
            )?;
            Some(tape.scalar(v)?.to_f64())
        } else {
            None
        };
        let distributed = if self.kind.has_distributed() {
            let v = distributed_score(
                &mut tape,
                &self.config,
                query,
                doc,
                Mode::Eval,
                &mut rng,
                None,
            )?;
            Some(tape.scalar(v)?.to_f64())
        } else {
            None
        };
        Ok(PairScores { local, distributed })
    }

    /// Runs one eval-mode forward pass recording intermediate shapes.
    pub fn trace_shapes(
        &self,
        query: &QueryInput,
        doc: &DocInput,
    ) -> Result<ShapeTrace, ModelError> {
        let mut tape = Tape::with_shared_params(&self.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trace = ShapeTrace::default();
        if self.kind.has_local() {
            local_score(
                &mut tape,
                &self.config,
                query,
                doc,
                Mode::Eval,
                &mut rng,
                Some(&mut trace),
            )?;
        }
        if self.kind.has_distributed() {
            distributed_score(
                &mut tape,
                &self.config,
                query,
                doc,
                Mode::Eval,
                &mut rng,
                Some(&mut trace),
            )?;
        }
        Ok(trace)
    }
}

fn record(
    trace: &mut Option<&mut ShapeTrace>,
    name: &'static str,
    tape: &Tape<'_, impl Real>,
    v: Var,
) {
    if let Some(t) = trace.as_deref_mut() {
        t.entries.push((name, tape.shape(v).to_vec()));
    }
}

fn dense<T: Real>(tape: &mut Tape<'_, T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
    let w = tape.param(&format!("{prefix}.weight"))?;
    let b = tape.param(&format!("{prefix}.bias"))?;
    let y = tape.affine(x, w, b)?;
    Ok(tape.tanh(y))
}

fn conv<T: Real>(tape: &mut Tape<'_, T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
    let k = tape.param(&format!("{prefix}.weight"))?;
    let b = tape.param(&format!("{prefix}.bias"))?;
    let y = tape.conv_seq(x, k, b)?;
    Ok(tape.tanh(y))
}

/// Two hidden layers, dropout, then a scalar output, all with tanh.
fn head<T: Real, R: RngCore + ?Sized>(
    tape: &mut Tape<'_, T>,
    x: Var,
    prefix: &str,
    dropout: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var, ModelError> {
    let h = dense(tape, x, &format!("{prefix}.fc1"))?;
    let h = dense(tape, h, &format!("{prefix}.fc2"))?;
    let h = tape.dropout(h, dropout, mode, rng)?;
    dense(tape, h, &format!("{prefix}.out"))
}

/// Local subnetwork on the exact-match interaction matrix. The convolution
/// kernel spans every document position and slides over query positions,
/// so each output column summarizes how one query term matches the whole
/// document.
pub fn local_score<T: Real, R: RngCore + ?Sized>(
    tape: &mut Tape<'_, T>,
    config: &ModelConfig,
    query: &QueryInput,
    doc: &DocInput,
    mode: Mode,
    rng: &mut R,
    mut trace: Option<&mut ShapeTrace>,
) -> Result<Var, ModelError> {
    let x = interaction_matrix(&query.terms, &doc.terms);
    let expected = [config.doc_len, config.query_len];
    if [x.doc_len(), x.query_len()] != expected {
        return Err(ModelError::InputShape {
            expected: expected.to_vec(),
            found: vec![x.doc_len(), x.query_len()],
        });
    }
    let x = tape.leaf(x.to_tensor());
    let c = conv(tape, x, "local.conv")?;
    record(&mut trace, "local.conv", tape, c);
    let flat = tape.flatten(c)?;
    head(tape, flat, "local", config.dropout, mode, rng)
}

/// Distributed subnetwork: embeds query and document n-graph matrices,
/// matches the pooled query embedding against every document span with a
/// Hadamard product, then scores the match matrix.
pub fn distributed_score<T: Real, R: RngCore + ?Sized>(
    tape: &mut Tape<'_, T>,
    config: &ModelConfig,
    query: &QueryInput,
    doc: &DocInput,
    mode: Mode,
    rng: &mut R,
    mut trace: Option<&mut ShapeTrace>,
) -> Result<Var, ModelError> {
    for (m, len) in [
        (&query.ngraphs, config.query_len),
        (&doc.ngraphs, config.doc_len),
    ] {
        if m.vocab_size() != config.vocab_size {
            return Err(ModelError::VocabMismatch {
                expected: config.vocab_size,
                found: m.vocab_size(),
            });
        }
        if m.seq_len() != len {
            return Err(ModelError::InputShape {
                expected: vec![config.vocab_size, len],
                found: vec![m.vocab_size(), m.seq_len()],
            });
        }
    }
    let q = tape.leaf(query.ngraphs.to_tensor());
    let q = conv(tape, q, "dist.query_conv")?;
    record(&mut trace, "dist.query_conv", tape, q);
    let q = tape.maxpool_seq(q, config.query_conv_len())?;
    record(&mut trace, "dist.query_pool", tape, q);
    let q = dense(tape, q, "dist.query_fc")?;
    record(&mut trace, "dist.query_embedding", tape, q);

    let d = tape.leaf(doc.ngraphs.to_tensor());
    let d = conv(tape, d, "dist.doc_conv")?;
    record(&mut trace, "dist.doc_conv", tape, d);
    let d = tape.maxpool_seq(d, config.doc_pool)?;
    record(&mut trace, "dist.doc_pool", tape, d);
    let d = conv(tape, d, "dist.doc_proj")?;
    record(&mut trace, "dist.doc_embedding", tape, d);

    let m = tape.hadamard_broadcast(q, d)?;
    record(&mut trace, "dist.match", tape, m);
    let flat = tape.flatten(m)?;
    head(tape, flat, "dist", config.dropout, mode, rng)
}

/// Sum of the branch scores present in `kind`.
pub fn duet_score<T: Real, R: RngCore + ?Sized>(
    tape: &mut Tape<'_, T>,
    config: &ModelConfig,
    kind: ModelKind,
    query: &QueryInput,
    doc: &DocInput,
    mode: Mode,
    rng: &mut R,
) -> Result<Var, ModelError> {
    match kind {
        ModelKind::LocalOnly => local_score(tape, config, query, doc, mode, rng, None),
        ModelKind::DistributedOnly => distributed_score(tape, config, query, doc, mode, rng, None),
        ModelKind::Duet => {
            let l = local_score(tape, config, query, doc, mode, rng, None)?;
            let d = distributed_score(tape, config, query, doc, mode, rng, None)?;
            Ok(tape.add(l, d)?)
        }
    }
}

/// Softmax negative log-likelihood of the first document among `docs`.
pub fn ranking_loss<T: Real, R: RngCore + ?Sized>(
    tape: &mut Tape<'_, T>,
    config: &ModelConfig,
    kind: ModelKind,
    query: &QueryInput,
    docs: &[&DocInput],
    mode: Mode,
    rng: &mut R,
) -> Result<Var, ModelError> {
    let scores = docs
        .iter()
        .map(|d| duet_score(tape, config, kind, query, d, mode, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let s = tape.stack(&scores)?;
    Ok(tape.softmax_nll(s)?)
}

/// Score change from blanking one document term.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub position: usize,
    pub term: String,
    pub local_drop: Option<f64>,
    pub distributed_drop: Option<f64>,
    pub duet_drop: f64,
}

/// For every non-pad document position, replaces the term with padding,
/// re-featurizes and reports `base - ablated` per branch and for the sum.
pub fn term_ablation<T: Real>(
    model: &DuetModel<T>,
    featurizer: &Featurizer<'_>,
    query: &QueryInput,
    doc: &TermSequence,
) -> Result<Vec<AblationRow>, ModelError> {
    let base = model.score(query, &featurizer.doc_terms(doc.clone()))?;
    let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    (0..doc.target_len())
        .filter(|&i| !doc.is_pad(i))
        .map(|i| {
            let ablated = featurizer.doc_terms(doc.with_position_blanked(i));
            let s = model.score(query, &ablated)?;
            Ok(AblationRow {
                position: i,
                term: doc.terms()[i].clone(),
                local_drop: diff(base.local, s.local),
                distributed_drop: diff(base.distributed, s.distributed),
                duet_drop: base.total() - s.total(),
            })
        })
        .collect()
}

/// Ranks each query's candidate documents by model score, descending, ties
/// by ascending doc_id.
pub fn model_run<'a, T: Real>(
    model: &DuetModel<T>,
    featurizer: &Featurizer<'_>,
    tag: &str,
    queries: impl IntoIterator<Item = (&'a str, &'a [String], Vec<&'a Document>)>,
) -> Result<Run, ModelError> {
    let mut run = Run::new(tag);
    for (qid, terms, docs) in queries {
        let q = featurizer.query(terms);
        let scored = docs
            .iter()
            .map(|d| {
                Ok((
                    d.doc_id.clone(),
                    model.score(&q, &featurizer.doc(&d.tokens))?.total(),
                ))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        run.insert_scored(qid, scored);
    }
    Ok(run)
}
