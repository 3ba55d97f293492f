//! `duet`: build vocabularies, train and apply duet rankers, and evaluate
//! runs.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data error.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use duet::baselines::{Baseline, Bm25Params};
use duet::corpus::NegativeMode;
use duet::eval::Metric;
use duet::models::ModelKind;
use duet::synth::SynthKind;
use duet::trainer::SweepProtocol;

use crate::commands::{AblateArgs, RankArgs, Ranker, ReportArgs};
use crate::config::ExperimentConfig;
use crate::failure::{usage, Failure};

#[derive(Parser)]
#[command(
    name = "duet",
    version,
    about = "Train and evaluate duet document rankers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the n-graph vocabulary from a document collection.
    BuildVocab {
        /// Documents file, `doc_id<TAB>body` per line.
        #[arg(long)]
        documents: PathBuf,
        /// Number of n-graphs to keep.
        #[arg(long, default_value_t = 2000)]
        size: usize,
        /// Longest n-graph in characters.
        #[arg(long, default_value_t = 5)]
        max_n: usize,
        /// Output directory for vocab.tsv and config.cfg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from an experiment config.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Rank candidate documents with a trained model or a baseline.
    Rank {
        /// model.ckpt written by `train`; config.cfg and vocab.tsv are read
        /// from the same directory.
        #[arg(
            long,
            conflicts_with = "baseline",
            required_unless_present = "baseline"
        )]
        checkpoint: Option<PathBuf>,
        /// Baseline ranker: bm25 or ql.
        #[arg(long)]
        baseline: Option<Baseline>,
        /// BM25 term-frequency saturation.
        #[arg(long, default_value_t = 1.2)]
        bm25_k1: f64,
        /// BM25 length normalisation.
        #[arg(long, default_value_t = 0.75)]
        bm25_b: f64,
        /// Query likelihood Dirichlet prior.
        #[arg(long, default_value_t = 1500.0)]
        ql_mu: f64,
        /// Queries file, `query_id<TAB>text` per line.
        #[arg(long)]
        queries: PathBuf,
        /// Documents file, `doc_id<TAB>body` per line.
        #[arg(long)]
        documents: PathBuf,
        /// `query_id<TAB>doc_id` lines restricting what each query ranks.
        /// Without it every document is ranked.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Run tag; defaults to the baseline name or model mode.
        #[arg(long)]
        tag: Option<String>,
        /// Output directory for run.tsv and config.cfg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute NDCG@1 and NDCG@10 per run and compare runs pairwise.
    Eval {
        /// Run file; repeat for several runs.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Judgments file, `query_id<TAB>doc_id<TAB>rating` per line.
        #[arg(long)]
        qrels: PathBuf,
        /// Output directory for metrics, comparisons and config.cfg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-term score drops when each document term is removed.
    Ablate {
        /// model.ckpt written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        documents: PathBuf,
        #[arg(long)]
        query_id: String,
        #[arg(long)]
        doc_id: String,
        /// Output directory for ablation.tsv and config.cfg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Slice runs by query length and term rarity and project them by PCA.
    Report {
        /// Run file; repeat for several runs.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        qrels: PathBuf,
        /// Queries the runs cover.
        #[arg(long)]
        queries: PathBuf,
        /// Training queries; term rarity is counted over these.
        #[arg(long)]
        train_queries: PathBuf,
        /// ndcg1 or ndcg10.
        #[arg(long, default_value = "ndcg1")]
        metric: Metric,
        /// Queries sampled for PCA.
        #[arg(long, default_value_t = 1000)]
        pca_sample: usize,
        /// Seed for the PCA query sample and start vectors.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for slices_*.tsv, pca.tsv and config.cfg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on nested subsets of increasing size and rank validation queries.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated training set sizes.
        #[arg(long, value_delimiter = ',', default_value = "128,512,2048")]
        sizes: Vec<usize>,
        /// one-epoch, samples-seen=N, or both.
        #[arg(long, default_value = "both")]
        protocol: String,
    },
    /// Generate a synthetic judged corpus.
    Synth {
        /// exact, synonym, mixed or confusable.
        #[arg(long)]
        kind: SynthKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of queries; defaults per kind.
        #[arg(long)]
        queries: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config of `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// duet, local or distributed.
    #[arg(long)]
    mode: Option<ModelKind>,
    /// judged or random.
    #[arg(long)]
    negatives: Option<NegativeMode>,
    /// Train on a seeded subset of this many instances.
    #[arg(long)]
    max_instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write a checkpoint every N minibatches.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Any other config key, as key=value; repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply_overrides(&self.overrides)?;
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        if let Some(m) = self.mode {
            cfg.train.mode = m;
        }
        if let Some(n) = self.negatives {
            cfg.train.negatives = n;
        }
        if let Some(n) = self.max_instances {
            cfg.train.max_instances = Some(n);
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(n) = self.checkpoint_every {
            cfg.train.checkpoint_every = Some(n);
        }
        Ok(cfg)
    }
}

fn protocols(spec: &str, sizes: &[usize]) -> Result<Vec<SweepProtocol>, Failure> {
    let total = sizes.iter().copied().max().unwrap_or(1);
    match spec {
        "both" => Ok(vec![
            SweepProtocol::OneEpoch,
            SweepProtocol::SamplesSeen { total },
        ]),
        "samples-seen" => Ok(vec![SweepProtocol::SamplesSeen { total }]),
        other => other.parse().map(|p| vec![p]).map_err(usage),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BuildVocab {
            documents,
            size,
            max_n,
            out,
        } => commands::build_vocab(&documents, size, max_n, &out),
        Command::Train { exp } => commands::train(exp.resolve()?),
        Command::Rank {
            checkpoint,
            baseline,
            bm25_k1,
            bm25_b,
            ql_mu,
            queries,
            documents,
            candidates,
            tag,
            out,
        } => {
            let ranker = match (checkpoint, baseline) {
                (Some(c), _) => Ranker::Checkpoint(c),
                (None, Some(Baseline::Bm25(_))) => Ranker::Baseline(Baseline::Bm25(Bm25Params {
                    k1: bm25_k1,
                    b: bm25_b,
                })),
                (None, Some(Baseline::Ql { .. })) => Ranker::Baseline(Baseline::Ql { mu: ql_mu }),
                (None, None) => return Err(usage("pass --checkpoint or --baseline")),
            };
            commands::rank(&RankArgs {
                ranker,
                queries,
                documents,
                candidates,
                tag,
                out,
            })
        }
        Command::Eval { runs, qrels, out } => commands::eval(&runs, &qrels, &out),
        Command::Ablate {
            checkpoint,
            queries,
            documents,
            query_id,
            doc_id,
            out,
        } => commands::ablate(&AblateArgs {
            checkpoint,
            queries,
            documents,
            query_id,
            doc_id,
            out,
        }),
        Command::Report {
            runs,
            qrels,
            queries,
            train_queries,
            metric,
            pca_sample,
            seed,
            out,
        } => commands::report(&ReportArgs {
            runs,
            qrels,
            queries,
            train_queries,
            metric,
            pca_sample,
            seed,
            out,
        }),
        Command::Sweep {
            exp,
            sizes,
            protocol,
        } => {
            let ps = protocols(&protocol, &sizes)?;
            commands::sweep_cmd(exp.resolve()?, &sizes, &ps)
        }
        Command::Synth {
            kind,
            seed,
            queries,
            out,
        } => commands::synth(kind, seed, queries, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
