//! Minibatch SGD on the softmax likelihood of the positive document.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Mode, ParamSet, Real, Tape};
use crate::corpus::{NegativeMode, TrainingInstance};
use crate::eval::ndcg_at_k;
use crate::models::{
    ranking_loss, DocInput, DuetModel, Featurizer, ModelError, ModelKind, QueryInput,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training instances")]
    NoInstances,
    #[error("non-finite loss {loss} on instance {instance}")]
    NonFinite { instance: String, loss: f64 },
    #[error("instance {instance} has {found} negatives, expected {expected}")]
    NegativeCount {
        instance: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint hook: {0}")]
    Hook(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: ModelKind,
    pub negatives: NegativeMode,
    pub max_instances: Option<usize>,
    /// Invoke the checkpoint hook every this many minibatches.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            dropout: 0.20,
            minibatch: 8,
            epochs: 1,
            seed: 0,
            mode: ModelKind::Duet,
            negatives: NegativeMode::Judged,
            max_instances: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.minibatch == 0 {
            return Err(TrainError::Config("minibatch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.max_instances == Some(0) {
            return Err(TrainError::Config("max_instances must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(TrainError::Config(
                "checkpoint_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub minibatches: usize,
    pub val_ndcg1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub instances: usize,
    pub steps: usize,
    pub wall_time: Duration,
}

impl TrainReport {
    /// `epoch<TAB>mean_loss<TAB>val_ndcg1` rows under a header; `NA` when
    /// no validation set was given.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tmean_loss\tval_ndcg1\n");
        for e in &self.epochs {
            let v = e
                .val_ndcg1
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{}\t{:.6}\t{v}\n", e.epoch, e.mean_loss));
        }
        out
    }
}

/// `θ -= lr * g` for every parameter holding a gradient, then clears it.
pub fn sgd_step<T: Real>(params: &mut ParamSet<T>, lr: f64) {
    let lr = T::from_f64(lr);
    for (_, t) in params.iter_mut() {
        if let Some(g) = t.take_grad() {
            for (v, g) in t.data_mut().iter_mut().zip(g) {
                *v = *v - lr * g;
            }
        }
    }
}

/// Featurized inputs cached by query and document id.
pub struct FeatureCache<'v> {
    featurizer: Featurizer<'v>,
    queries: HashMap<String, QueryInput>,
    docs: HashMap<String, DocInput>,
}

impl<'v> FeatureCache<'v> {
    pub fn new(featurizer: Featurizer<'v>) -> Self {
        FeatureCache {
            featurizer,
            queries: HashMap::new(),
            docs: HashMap::new(),
        }
    }

    pub fn featurize(&mut self, instances: &[TrainingInstance]) {
        for inst in instances {
            if !self.queries.contains_key(&inst.query_id) {
                let q = self.featurizer.query_terms(inst.query.clone());
                self.queries.insert(inst.query_id.clone(), q);
            }
            for c in inst.candidates() {
                if !self.docs.contains_key(&c.doc_id) {
                    let d = self.featurizer.doc_terms(c.terms.clone());
                    self.docs.insert(c.doc_id.clone(), d);
                }
            }
        }
    }

    fn inputs(&self, inst: &TrainingInstance) -> (&QueryInput, Vec<&DocInput>) {
        let q = &self.queries[&inst.query_id];
        let docs = inst.candidates().map(|c| &self.docs[&c.doc_id]).collect();
        (q, docs)
    }
}

/// Checkpoint hook: called with the minibatch count and current parameters.
pub type CheckpointHook<'a> = dyn FnMut(usize, &ParamSet<f32>) -> Result<(), String> + 'a;

/// Deterministic subset: the first `n` of a seeded permutation, so smaller
/// subsets are prefixes of larger ones.
pub fn subsample(instances: &[TrainingInstance], n: usize, seed: u64) -> Vec<TrainingInstance> {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed));
    order.truncate(n);
    order.sort_unstable();
    order.into_iter().map(|i| instances[i].clone()).collect()
}

/// Trains `model` in place.
pub fn train(
    model: &mut DuetModel<f32>,
    featurizer: Featurizer<'_>,
    instances: &[TrainingInstance],
    config: &TrainConfig,
    validation: Option<&[TrainingInstance]>,
) -> Result<TrainReport, TrainError> {
    train_with_hook(
        model,
        featurizer,
        instances,
        config,
        validation,
        &mut |_, _| Ok(()),
    )
}

pub fn train_with_hook(
    model: &mut DuetModel<f32>,
    featurizer: Featurizer<'_>,
    instances: &[TrainingInstance],
    config: &TrainConfig,
    validation: Option<&[TrainingInstance]>,
    hook: &mut CheckpointHook<'_>,
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    if config.mode != model.kind {
        return Err(TrainError::Config(format!(
            "training mode {} does not match a {} model",
            config.mode, model.kind
        )));
    }
    let start = Instant::now();
    let owned;
    let instances = match config.max_instances {
        Some(n) if n < instances.len() => {
            owned = subsample(instances, n, config.seed);
            &owned[..]
        }
        _ => instances,
    };
    if instances.is_empty() {
        return Err(TrainError::NoInstances);
    }
    let numneg = model.config.numneg;
    for inst in instances.iter().chain(validation.unwrap_or(&[])) {
        if inst.negatives.len() != numneg {
            return Err(TrainError::NegativeCount {
                instance: inst.id(),
                expected: numneg,
                found: inst.negatives.len(),
            });
        }
    }
    let mut cache = FeatureCache::new(featurizer);
    cache.featurize(instances);
    if let Some(v) = validation {
        cache.featurize(v);
    }
    let graph_config = crate::models::ModelConfig {
        dropout: config.dropout,
        ..model.config
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut report = TrainReport {
        instances: instances.len(),
        ..TrainReport::default()
    };
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut minibatches = 0;
        for batch in order.chunks(config.minibatch) {
            let scale = 1.0 / batch.len() as f32;
            model.params.zero_grads();
            for &i in batch {
                let inst = &instances[i];
                let (q, docs) = cache.inputs(inst);
                let mut tape = Tape::with_params(&mut model.params);
                let loss = ranking_loss(
                    &mut tape,
                    &graph_config,
                    model.kind,
                    q,
                    &docs,
                    Mode::Train,
                    &mut rng,
                )?;
                let value = tape.scalar(loss)?.to_f64();
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        instance: inst.id(),
                        loss: value,
                    });
                }
                loss_sum += value;
                let scaled = tape.scale(loss, scale);
                tape.backward(scaled)?;
            }
            sgd_step(&mut model.params, config.learning_rate);
            minibatches += 1;
            report.steps += 1;
            if config
                .checkpoint_every
                .is_some_and(|n| report.steps.is_multiple_of(n))
            {
                hook(report.steps, &model.params).map_err(TrainError::Hook)?;
            }
        }
        let mean_loss = loss_sum / instances.len() as f64;
        let val_ndcg1 = match validation {
            Some(v) if !v.is_empty() => validation_ndcg1(model, &cache, v)?,
            _ => None,
        };
        log::info!(
            "epoch {epoch}: mean loss {mean_loss:.6}, val ndcg@1 {}",
            val_ndcg1.map_or("NA".to_string(), |v| format!("{v:.4}"))
        );
        report.epochs.push(EpochStats {
            epoch,
            mean_loss,
            minibatches,
            val_ndcg1,
        });
    }
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Mean NDCG@1 over validation instances, each ranked over its own
/// candidates. Candidates without a rating count as label 0; instances
/// with no gain are skipped.
pub fn validation_ndcg1(
    model: &DuetModel<f32>,
    cache: &FeatureCache<'_>,
    instances: &[TrainingInstance],
) -> Result<Option<f64>, TrainError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for inst in instances {
        let (q, docs) = cache.inputs(inst);
        let mut scored: Vec<(String, f64, u8)> = Vec::with_capacity(docs.len());
        for (c, d) in inst.candidates().zip(docs) {
            let s = model.score(q, d)?.total();
            scored.push((c.doc_id.clone(), s, c.rating.map_or(0, |r| r.level())));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let labels: Vec<u8> = scored.iter().map(|s| s.2).collect();
        if let Some(v) = ndcg_at_k(&labels, 1).expect("k = 1") {
            sum += v;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// How many epochs each size in a training-size sweep trains for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepProtocol {
    /// One pass over each subset.
    OneEpoch,
    /// Every size sees about `total` samples: `ceil(total / size)` epochs.
    SamplesSeen { total: usize },
}

impl SweepProtocol {
    pub fn epochs_for(self, size: usize) -> usize {
        match self {
            SweepProtocol::OneEpoch => 1,
            SweepProtocol::SamplesSeen { total } => total.div_ceil(size.max(1)).max(1),
        }
    }
}

impl fmt::Display for SweepProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepProtocol::OneEpoch => f.write_str("one-epoch"),
            SweepProtocol::SamplesSeen { total } => write!(f, "samples-seen={total}"),
        }
    }
}

impl FromStr for SweepProtocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "one-epoch" {
            return Ok(SweepProtocol::OneEpoch);
        }
        if let Some(n) = s.strip_prefix("samples-seen=") {
            let total = n
                .parse()
                .map_err(|_| format!("invalid sample total {n:?}"))?;
            return Ok(SweepProtocol::SamplesSeen { total });
        }
        Err(format!(
            "unknown sweep protocol {s:?} (expected one-epoch|samples-seen=N)"
        ))
    }
}

pub struct SweepPoint {
    pub size: usize,
    pub epochs: usize,
    pub report: TrainReport,
    pub model: DuetModel<f32>,
}

/// Trains a fresh model per size on nested subsets of `instances`.
pub fn sweep(
    base: &DuetModel<f32>,
    featurizer: Featurizer<'_>,
    instances: &[TrainingInstance],
    sizes: &[usize],
    protocol: SweepProtocol,
    config: &TrainConfig,
    validation: Option<&[TrainingInstance]>,
) -> Result<Vec<SweepPoint>, TrainError> {
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size > instances.len() {
            log::warn!(
                "sweep size {size} exceeds the {} available instances; training on all of them",
                instances.len()
            );
        }
        let epochs = protocol.epochs_for(size);
        let cfg = TrainConfig {
            epochs,
            max_instances: Some(size),
            ..config.clone()
        };
        let mut model = base.clone();
        let report = train(&mut model, featurizer, instances, &cfg, validation)?;
        points.push(SweepPoint {
            size,
            epochs,
            report,
            model,
        });
    }
    Ok(points)
}
