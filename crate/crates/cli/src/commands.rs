//! One function per subcommand. Each writes its outputs plus the resolved
//! `config.cfg` into an output directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use duet::autodiff::checkpoint::{self, CheckpointMeta};
use duet::baselines::{baseline_run, Baseline, CollectionStats};
use duet::corpus::{
    build_training_instances, read_documents, read_qrels, read_queries, Collection, Document,
    InstanceConfig, Judgment, NegativeMode, Qrels, Query, TrainingInstance,
};
use duet::eval::{
    compare_runs, comparison_table, evaluate_run, performance_pca, slice_report, term_counts,
    Grouping, Metric, RunResult,
};
use duet::featurize::{build_ngraph_vocabulary, NGraphVocabulary};
use duet::models::{model_run, term_ablation, DuetModel, Featurizer};
use duet::run::Run;
use duet::synth::{generate, SynthConfig, SynthKind};
use duet::trainer::{sweep, train_with_hook, SweepProtocol, TrainReport};

use crate::config::ExperimentConfig;
use crate::failure::{data, usage, Failure, OrData};

pub const CONFIG_FILE: &str = "config.cfg";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const REPORT_FILE: &str = "train_report.tsv";
pub const RUN_FILE: &str = "run.tsv";

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).or_data_ctx(&format!("cannot create {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).or_data_ctx(&format!("cannot write {}", path.display()))
}

/// `key = value` lines for commands that take flags rather than a config.
fn flag_config(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn load_documents(path: &Path) -> Result<Vec<Document>, Failure> {
    let docs = read_documents(path).or_data()?;
    if docs.is_empty() {
        return Err(data(format!("{}: no documents", path.display())));
    }
    Ok(docs)
}

fn load_queries(path: &Path) -> Result<Vec<Query>, Failure> {
    let queries = read_queries(path).or_data()?;
    if queries.is_empty() {
        return Err(data(format!("{}: no queries", path.display())));
    }
    Ok(queries)
}

/// Reads `query_id<TAB>doc_id` lines, keeping file order per query.
pub fn read_candidates(path: &Path) -> Result<BTreeMap<String, Vec<String>>, Failure> {
    let text = fs::read_to_string(path).or_data_ctx(&show(path))?;
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 2 || f[0].is_empty() || f[1].is_empty() {
            return Err(data(format!(
                "{}:{}: expected query_id<TAB>doc_id",
                path.display(),
                i + 1
            )));
        }
        let docs = out.entry(f[0].to_string()).or_default();
        if !docs.iter().any(|d| d == f[1]) {
            docs.push(f[1].to_string());
        }
    }
    if out.is_empty() {
        return Err(data(format!("{}: no candidates", path.display())));
    }
    Ok(out)
}

/// Query id, query terms and the documents to rank for it.
type RankInput<'a> = (&'a str, &'a [String], Vec<&'a Document>);

/// Pairs each query with the documents it should be ranked over: its
/// candidate list if given, otherwise every document.
fn ranking_inputs<'a>(
    queries: &'a [Query],
    docs: &'a HashMap<String, Document>,
    all_docs: &'a [Document],
    candidates: Option<&BTreeMap<String, Vec<String>>>,
) -> Result<Vec<RankInput<'a>>, Failure> {
    let mut out = Vec::new();
    for q in queries {
        let picked: Vec<&Document> = match candidates {
            None => all_docs.iter().collect(),
            Some(c) => match c.get(&q.query_id) {
                None => continue,
                Some(ids) => ids
                    .iter()
                    .map(|d| {
                        docs.get(d).ok_or_else(|| {
                            data(format!(
                                "candidate {d} for query {} is not a known document",
                                q.query_id
                            ))
                        })
                    })
                    .collect::<Result<_, _>>()?,
            },
        };
        out.push((q.query_id.as_str(), q.tokens.as_slice(), picked));
    }
    if out.is_empty() {
        return Err(data("no candidates for any query"));
    }
    if let Some(c) = candidates {
        let known: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
        let missing = c.keys().filter(|q| !known.contains(q.as_str())).count();
        if missing > 0 {
            log::warn!("{missing} candidate queries are not in the queries file and were skipped");
        }
    }
    Ok(out)
}

pub fn build_vocab(documents: &Path, size: usize, max_n: usize, out: &Path) -> Result<(), Failure> {
    if size == 0 || max_n == 0 {
        return Err(usage(
            "vocabulary size and max n-graph length must be positive",
        ));
    }
    let docs = load_documents(documents)?;
    let vocab = build_ngraph_vocabulary(&docs, max_n, size).or_data()?;
    create_dir(out)?;
    write(&out.join(VOCAB_FILE), &vocab.to_tsv())?;
    write(
        &out.join(CONFIG_FILE),
        &flag_config(&[
            ("documents", show(documents)),
            ("vocab_size", size.to_string()),
            ("max_ngraph", max_n.to_string()),
        ]),
    )?;
    println!(
        "wrote {} n-graphs to {}",
        vocab.len(),
        out.join(VOCAB_FILE).display()
    );
    Ok(())
}

/// Everything `train` and `sweep` need, loaded from an experiment config.
struct Prepared {
    cfg: ExperimentConfig,
    vocab: NGraphVocabulary,
    documents: Vec<Document>,
    instances: Vec<TrainingInstance>,
    validation: Option<Validation>,
}

struct Validation {
    queries: Vec<Query>,
    qrels: Qrels,
    instances: Vec<TrainingInstance>,
    candidates: BTreeMap<String, Vec<String>>,
}

/// Drops judgments for queries outside `queries`, so one qrels file can
/// serve several query subsets.
fn restrict_judgments(judgments: Vec<Judgment>, queries: &[Query]) -> Vec<Judgment> {
    let ids: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
    let total = judgments.len();
    let kept: Vec<Judgment> = judgments
        .into_iter()
        .filter(|j| ids.contains(j.query_id.as_str()))
        .collect();
    if kept.len() < total {
        log::warn!(
            "ignoring {} judgments for queries not in the queries file",
            total - kept.len()
        );
    }
    kept
}

fn prepare(mut cfg: ExperimentConfig) -> Result<Prepared, Failure> {
    cfg.model_config()
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    let docs_path = cfg.require(&cfg.documents, "documents")?;
    let q_path = cfg.require(&cfg.train_queries, "train_queries")?;
    let r_path = cfg.require(&cfg.train_qrels, "train_qrels")?;
    let documents = load_documents(&docs_path)?;
    let queries = load_queries(&q_path)?;
    let judgments = restrict_judgments(read_qrels(&r_path).or_data()?, &queries);
    let collection = Collection::new(queries, documents.clone(), judgments).or_data()?;

    let vocab = match &cfg.vocab {
        Some(p) => NGraphVocabulary::read_tsv(p, Some(cfg.model.max_ngraph)).or_data()?,
        None => build_ngraph_vocabulary(&documents, cfg.model.max_ngraph, cfg.model.vocab_size)
            .or_data()?,
    };
    if vocab.is_empty() {
        return Err(data("the n-graph vocabulary is empty"));
    }
    if vocab.len() != cfg.model.vocab_size {
        log::warn!(
            "vocabulary has {} n-graphs; vocab_size set from {} to match",
            vocab.len(),
            cfg.model.vocab_size
        );
        cfg.model.vocab_size = vocab.len();
    }

    let inst_cfg = InstanceConfig {
        mode: cfg.negatives(),
        numneg: cfg.model.numneg,
        seed: cfg.train.seed,
        query_len: cfg.model.query_len,
        doc_len: cfg.model.doc_len,
    };
    let (instances, report) = build_training_instances(&collection, &inst_cfg).or_data()?;
    log::info!(
        "{} training instances from {} queries ({} patterns skipped)",
        report.instances,
        report.queries_seen,
        report.skipped_patterns
    );
    if instances.is_empty() {
        return Err(data(
            "no training instances: no query has a positive with enough negatives",
        ));
    }

    let validation = match (&cfg.validation_queries, &cfg.validation_qrels) {
        (Some(vq), Some(vr)) => {
            let queries = load_queries(vq)?;
            let judgments = restrict_judgments(read_qrels(vr).or_data()?, &queries);
            let qrels = Qrels::from_judgments(&judgments);
            let vcol =
                Collection::new(queries.clone(), documents.clone(), judgments.clone()).or_data()?;
            let (instances, _) = build_training_instances(
                &vcol,
                &InstanceConfig {
                    mode: NegativeMode::Judged,
                    ..inst_cfg
                },
            )
            .or_data()?;
            let candidates = match &cfg.validation_candidates {
                Some(p) => read_candidates(p)?,
                None => {
                    let mut c: BTreeMap<String, Vec<String>> = BTreeMap::new();
                    for j in &judgments {
                        c.entry(j.query_id.clone())
                            .or_default()
                            .push(j.doc_id.clone());
                    }
                    c
                }
            };
            Some(Validation {
                queries,
                qrels,
                instances,
                candidates,
            })
        }
        (None, None) => None,
        _ => {
            return Err(usage(
                "validation_queries and validation_qrels must be given together",
            ))
        }
    };
    Ok(Prepared {
        cfg,
        vocab,
        documents,
        instances,
        validation,
    })
}

fn save_checkpoint(
    path: &Path,
    model: &DuetModel<f32>,
    cfg: &ExperimentConfig,
) -> Result<(), Failure> {
    let meta = CheckpointMeta::new(cfg.train.seed, &cfg.model_text());
    checkpoint::save(path, &model.params, &meta).or_data_ctx(&show(path))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    cfg.output_dir
        .clone()
        .ok_or_else(|| usage("no output directory: pass --out or set output_dir"))
}

pub fn train(cfg: ExperimentConfig) -> Result<(), Failure> {
    let out = out_dir(&cfg)?;
    let p = prepare(cfg)?;
    let cfg = &p.cfg;
    create_dir(&out)?;
    let cfg = &ExperimentConfig {
        output_dir: Some(out.clone()),
        ..cfg.clone()
    };
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    write(&out.join(VOCAB_FILE), &p.vocab.to_tsv())?;

    let mut model = DuetModel::<f32>::new(cfg.model_config(), cfg.kind(), cfg.train.seed)
        .map_err(|e| usage(e.to_string()))?;
    let featurizer = Featurizer::new(&p.vocab, &model.config);
    if cfg.train.checkpoint_every.is_some() {
        create_dir(&out.join("checkpoints"))?;
    }
    let mut hook = |step: usize, params: &duet::autodiff::ParamSet<f32>| -> Result<(), String> {
        let path = out.join("checkpoints").join(format!("step-{step:06}.ckpt"));
        let meta = CheckpointMeta::new(cfg.train.seed, &cfg.model_text());
        checkpoint::save(&path, params, &meta).map_err(|e| e.to_string())
    };
    let report = train_with_hook(
        &mut model,
        featurizer,
        &p.instances,
        &cfg.train,
        p.validation.as_ref().map(|v| v.instances.as_slice()),
        &mut hook,
    )
    .or_data()?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &model, cfg)?;
    write(&out.join(REPORT_FILE), &report.to_tsv())?;
    print_report(&report);
    println!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn print_report(report: &TrainReport) {
    if let Some(last) = report.epochs.last() {
        println!(
            "trained on {} instances, {} steps; final mean loss {:.6}{}",
            report.instances,
            report.steps,
            last.mean_loss,
            last.val_ndcg1
                .map_or(String::new(), |v| format!(", validation NDCG@1 {v:.4}"))
        );
    }
}

/// A trained model with the config and vocabulary stored beside it.
pub struct Loaded {
    pub vocab: NGraphVocabulary,
    pub model: DuetModel<f32>,
}

pub fn load_model(checkpoint_path: &Path) -> Result<Loaded, Failure> {
    let dir = checkpoint_path.parent().unwrap_or(Path::new(""));
    let (params, meta) = checkpoint::load(checkpoint_path).or_data_ctx(&show(checkpoint_path))?;
    let cfg_path = dir.join(CONFIG_FILE);
    if !cfg_path.exists() {
        return Err(data(format!(
            "{} not found beside the checkpoint",
            cfg_path.display()
        )));
    }
    let cfg = ExperimentConfig::load(&cfg_path)?;
    if CheckpointMeta::new(meta.seed, &cfg.model_text()) != meta {
        return Err(data(format!(
            "{} does not match the configuration digest stored in {}",
            cfg_path.display(),
            checkpoint_path.display()
        )));
    }
    let vocab =
        NGraphVocabulary::read_tsv(&dir.join(VOCAB_FILE), Some(cfg.model.max_ngraph)).or_data()?;
    let model = DuetModel::from_params(cfg.model_config(), cfg.kind(), params).or_data()?;
    model.check_vocab(&vocab).or_data()?;
    Ok(Loaded { vocab, model })
}

pub enum Ranker {
    Checkpoint(PathBuf),
    Baseline(Baseline),
}

pub struct RankArgs {
    pub ranker: Ranker,
    pub queries: PathBuf,
    pub documents: PathBuf,
    pub candidates: Option<PathBuf>,
    pub tag: Option<String>,
    pub out: PathBuf,
}

pub fn rank(args: &RankArgs) -> Result<(), Failure> {
    let queries = load_queries(&args.queries)?;
    let all_docs = load_documents(&args.documents)?;
    let by_id: HashMap<String, Document> = all_docs
        .iter()
        .map(|d| (d.doc_id.clone(), d.clone()))
        .collect();
    let candidates = args
        .candidates
        .as_deref()
        .map(read_candidates)
        .transpose()?;
    let inputs = ranking_inputs(&queries, &by_id, &all_docs, candidates.as_ref())?;

    let mut pairs = vec![
        ("queries", show(&args.queries)),
        ("documents", show(&args.documents)),
        (
            "candidates",
            args.candidates.as_deref().map_or("none".into(), show),
        ),
    ];
    let run = match &args.ranker {
        Ranker::Baseline(b) => {
            let tag = args.tag.clone().unwrap_or_else(|| b.name().to_string());
            let stats = CollectionStats::build(&all_docs);
            match b {
                Baseline::Bm25(p) => {
                    pairs.push(("baseline", "bm25".into()));
                    pairs.push(("bm25_k1", p.k1.to_string()));
                    pairs.push(("bm25_b", p.b.to_string()));
                }
                Baseline::Ql { mu } => {
                    pairs.push(("baseline", "ql".into()));
                    pairs.push(("ql_mu", mu.to_string()));
                }
            }
            baseline_run(b, &tag, inputs, &stats).or_data()?
        }
        Ranker::Checkpoint(path) => {
            let loaded = load_model(path)?;
            if candidates.is_none() {
                log::warn!("no candidates file: scoring every document for every query");
            }
            pairs.push(("checkpoint", show(path)));
            pairs.push(("mode", loaded.model.kind.to_string()));
            let tag = args
                .tag
                .clone()
                .unwrap_or_else(|| loaded.model.kind.to_string());
            let featurizer = Featurizer::new(&loaded.vocab, &loaded.model.config);
            model_run(&loaded.model, &featurizer, &tag, inputs).or_data()?
        }
    };
    pairs.push(("tag", run.tag.clone()));
    create_dir(&args.out)?;
    run.write(&args.out.join(RUN_FILE)).or_data()?;
    write(&args.out.join(CONFIG_FILE), &flag_config(&pairs))?;
    println!(
        "ranked {} queries into {}",
        run.rankings.len(),
        args.out.join(RUN_FILE).display()
    );
    Ok(())
}

fn read_runs(paths: &[PathBuf]) -> Result<Vec<Run>, Failure> {
    if paths.is_empty() {
        return Err(usage("at least one run file is required"));
    }
    let mut runs: Vec<Run> = Vec::new();
    for p in paths {
        let run = Run::read(p).or_data()?;
        if run.rankings.is_empty() {
            return Err(data(format!("{}: no rankings", p.display())));
        }
        if runs.iter().any(|r| r.tag == run.tag) {
            return Err(usage(format!(
                "run tag {:?} appears in more than one run file",
                run.tag
            )));
        }
        runs.push(run);
    }
    Ok(runs)
}

fn evaluate_all(runs: &[Run], qrels_path: &Path) -> Result<Vec<RunResult>, Failure> {
    let judgments = read_qrels(qrels_path).or_data()?;
    if judgments.is_empty() {
        return Err(data(format!("{}: no judgments", qrels_path.display())));
    }
    let qrels = Qrels::from_judgments(&judgments);
    let results: Vec<RunResult> = runs.iter().map(|r| evaluate_run(r, &qrels)).collect();
    for r in &results {
        if !r.unjudged_queries.is_empty() {
            log::warn!(
                "run {}: {} queries have no judgments and were excluded",
                r.run_tag,
                r.unjudged_queries.len()
            );
        }
        if r.per_query.is_empty() {
            return Err(data(format!(
                "run {} has no query with a judged gain",
                r.run_tag
            )));
        }
    }
    Ok(results)
}

/// File-name-safe form of a run tag.
fn file_tag(tag: &str) -> String {
    tag.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn eval(run_paths: &[PathBuf], qrels: &Path, out: &Path) -> Result<(), Failure> {
    let runs = read_runs(run_paths)?;
    let results = evaluate_all(&runs, qrels)?;
    create_dir(out)?;
    let mut summary = String::from("run\tqueries\tndcg1\tndcg10\n");
    for r in &results {
        write(
            &out.join(format!("metrics_{}.tsv", file_tag(&r.run_tag))),
            &r.to_tsv(),
        )?;
        let (a, b) = r.means();
        let _ = writeln!(
            summary,
            "{}\t{}\t{a:.6}\t{b:.6}",
            r.run_tag,
            r.per_query.len()
        );
    }
    write(&out.join("summary.tsv"), &summary)?;
    print!("{summary}");
    if results.len() > 1 {
        for metric in [Metric::Ndcg1, Metric::Ndcg10] {
            let table = comparison_table(&compare_runs(&results, metric));
            write(&out.join(format!("comparison_{metric}.tsv")), &table)?;
            println!("{metric}:");
            print!("{table}");
        }
    }
    let mut pairs = vec![("qrels", show(qrels))];
    pairs.extend(run_paths.iter().map(|p| ("run", show(p))));
    write(&out.join(CONFIG_FILE), &flag_config(&pairs))?;
    Ok(())
}

pub struct ReportArgs {
    pub runs: Vec<PathBuf>,
    pub qrels: PathBuf,
    pub queries: PathBuf,
    pub train_queries: PathBuf,
    pub metric: Metric,
    pub pca_sample: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn report(args: &ReportArgs) -> Result<(), Failure> {
    let runs = read_runs(&args.runs)?;
    let results = evaluate_all(&runs, &args.qrels)?;
    let queries: BTreeMap<String, Query> = load_queries(&args.queries)?
        .into_iter()
        .map(|q| (q.query_id.clone(), q))
        .collect();
    let train_queries = read_queries(&args.train_queries).or_data()?;
    let counts = term_counts(&train_queries);
    create_dir(&args.out)?;
    for grouping in [Grouping::QueryLength, Grouping::RarestTerm] {
        let slices = slice_report(&results, &queries, &counts, grouping, args.metric);
        write(
            &args.out.join(format!("slices_{grouping}.tsv")),
            &slices.to_tsv(),
        )?;
    }
    match performance_pca(&results, args.metric, args.pca_sample, args.seed) {
        Ok(pca) => {
            if pca.degenerate {
                log::warn!("all runs perform identically; PCA coordinates are zero");
            }
            write(&args.out.join("pca.tsv"), &pca.to_tsv())?;
        }
        Err(e) => log::warn!("skipping PCA: {e}"),
    }
    let mut pairs = vec![
        ("qrels", show(&args.qrels)),
        ("queries", show(&args.queries)),
        ("train_queries", show(&args.train_queries)),
        ("metric", args.metric.to_string()),
        ("pca_sample", args.pca_sample.to_string()),
        ("seed", args.seed.to_string()),
    ];
    pairs.extend(args.runs.iter().map(|p| ("run", show(p))));
    write(&args.out.join(CONFIG_FILE), &flag_config(&pairs))?;
    println!(
        "wrote slice reports for {} runs to {}",
        results.len(),
        args.out.display()
    );
    Ok(())
}

pub struct AblateArgs {
    pub checkpoint: PathBuf,
    pub queries: PathBuf,
    pub documents: PathBuf,
    pub query_id: String,
    pub doc_id: String,
    pub out: PathBuf,
}

pub fn ablate(args: &AblateArgs) -> Result<(), Failure> {
    let loaded = load_model(&args.checkpoint)?;
    let query = load_queries(&args.queries)?
        .into_iter()
        .find(|q| q.query_id == args.query_id)
        .ok_or_else(|| {
            data(format!(
                "query {} not found in {}",
                args.query_id,
                args.queries.display()
            ))
        })?;
    let doc = load_documents(&args.documents)?
        .into_iter()
        .find(|d| d.doc_id == args.doc_id)
        .ok_or_else(|| {
            data(format!(
                "document {} not found in {}",
                args.doc_id,
                args.documents.display()
            ))
        })?;
    if doc.tokens.is_empty() {
        return Err(data(format!(
            "document {} has no terms to ablate",
            args.doc_id
        )));
    }
    let featurizer = Featurizer::new(&loaded.vocab, &loaded.model.config);
    let terms = duet::corpus::TermSequence::new(&doc.tokens, loaded.model.config.doc_len);
    let rows = term_ablation(
        &loaded.model,
        &featurizer,
        &featurizer.query(&query.tokens),
        &terms,
    )
    .or_data()?;
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.6}"));
    let mut table = String::from("position\tterm\tlocal_drop\tdistributed_drop\tduet_drop\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{:.6}",
            r.position,
            r.term,
            na(r.local_drop),
            na(r.distributed_drop),
            r.duet_drop
        );
    }
    create_dir(&args.out)?;
    write(&args.out.join("ablation.tsv"), &table)?;
    write(
        &args.out.join(CONFIG_FILE),
        &flag_config(&[
            ("checkpoint", show(&args.checkpoint)),
            ("queries", show(&args.queries)),
            ("documents", show(&args.documents)),
            ("query_id", args.query_id.clone()),
            ("doc_id", args.doc_id.clone()),
        ]),
    )?;
    println!(
        "ablated {} document terms into {}",
        rows.len(),
        args.out.join("ablation.tsv").display()
    );
    Ok(())
}

fn protocol_dir(p: SweepProtocol) -> String {
    match p {
        SweepProtocol::OneEpoch => "one-epoch".into(),
        SweepProtocol::SamplesSeen { total } => format!("samples-seen-{total}"),
    }
}

pub fn sweep_cmd(
    cfg: ExperimentConfig,
    sizes: &[usize],
    protocols: &[SweepProtocol],
) -> Result<(), Failure> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(usage("sweep sizes must be positive"));
    }
    let out = out_dir(&cfg)?;
    let p = prepare(cfg)?;
    let validation = p
        .validation
        .as_ref()
        .ok_or_else(|| usage("sweep needs validation_queries and validation_qrels to rank"))?;
    let cfg = &p.cfg;
    if let Some(&big) = sizes.iter().max() {
        if big > p.instances.len() {
            log::warn!(
                "largest sweep size {big} exceeds the {} training instances available",
                p.instances.len()
            );
        }
    }
    create_dir(&out)?;
    write(
        &out.join(CONFIG_FILE),
        &(ExperimentConfig {
            output_dir: Some(out.clone()),
            ..cfg.clone()
        })
        .to_text(),
    )?;
    write(&out.join(VOCAB_FILE), &p.vocab.to_tsv())?;

    let by_id: HashMap<String, Document> = p
        .documents
        .iter()
        .map(|d| (d.doc_id.clone(), d.clone()))
        .collect();
    let base = DuetModel::<f32>::new(cfg.model_config(), cfg.kind(), cfg.train.seed)
        .map_err(|e| usage(e.to_string()))?;
    let featurizer = Featurizer::new(&p.vocab, &base.config);
    let mut summary =
        String::from("protocol\tsize\tinstances\tepochs\tfinal_loss\tndcg1\tndcg10\n");
    for &protocol in protocols {
        let points = sweep(
            &base,
            featurizer,
            &p.instances,
            sizes,
            protocol,
            &cfg.train,
            Some(&validation.instances),
        )
        .or_data()?;
        for point in points {
            let dir = out
                .join(protocol_dir(protocol))
                .join(format!("size-{}", point.size));
            create_dir(&dir)?;
            let point_cfg = ExperimentConfig {
                train: duet::trainer::TrainConfig {
                    epochs: point.epochs,
                    max_instances: Some(point.size),
                    ..cfg.train.clone()
                },
                output_dir: Some(dir.clone()),
                ..cfg.clone()
            };
            write(&dir.join(CONFIG_FILE), &point_cfg.to_text())?;
            write(&dir.join(VOCAB_FILE), &p.vocab.to_tsv())?;
            write(&dir.join(REPORT_FILE), &point.report.to_tsv())?;
            save_checkpoint(&dir.join(CHECKPOINT_FILE), &point.model, &point_cfg)?;
            let tag = format!("{}-{}", protocol_dir(protocol), point.size);
            let inputs = ranking_inputs(
                &validation.queries,
                &by_id,
                &p.documents,
                Some(&validation.candidates),
            )?;
            let run = model_run(&point.model, &featurizer, &tag, inputs).or_data()?;
            run.write(&dir.join(RUN_FILE)).or_data()?;
            let result = evaluate_run(&run, &validation.qrels);
            write(&dir.join("metrics.tsv"), &result.to_tsv())?;
            let (a, b) = result.means();
            let loss = point.report.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
            let _ = writeln!(
                summary,
                "{protocol}\t{}\t{}\t{}\t{loss:.6}\t{a:.6}\t{b:.6}",
                point.size, point.report.instances, point.epochs
            );
        }
    }
    write(&out.join("sweep.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn synth(
    kind: SynthKind,
    seed: u64,
    queries: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    let mut cfg = SynthConfig::new(kind, seed);
    if let Some(n) = queries {
        if n < 3 {
            return Err(usage("a synthetic corpus needs at least 3 queries"));
        }
        cfg.queries = n;
    }
    let corpus = generate(&cfg);
    corpus.write(out).or_data_ctx(&show(out))?;
    write(
        &out.join(CONFIG_FILE),
        &flag_config(&[
            ("kind", kind.to_string()),
            ("seed", seed.to_string()),
            ("queries", cfg.queries.to_string()),
            ("families", cfg.families.to_string()),
            ("bad_pool", cfg.bad_pool.to_string()),
            ("bad_per_query", cfg.bad_per_query.to_string()),
            ("test_fraction", cfg.test_fraction.to_string()),
            ("min_len", cfg.min_len.to_string()),
            ("max_len", cfg.max_len.to_string()),
        ]),
    )?;
    let mut exp = ExperimentConfig::desk();
    exp.train.seed = seed;
    exp.documents = Some("documents.tsv".into());
    exp.train_queries = Some("train_queries.tsv".into());
    exp.train_qrels = Some("train_qrels.tsv".into());
    exp.validation_queries = Some("test_queries.tsv".into());
    exp.validation_qrels = Some("test_qrels.tsv".into());
    exp.validation_candidates = Some("test_candidates.tsv".into());
    write(&out.join("experiment.cfg"), &exp.to_text())?;
    println!(
        "wrote {} documents, {} queries ({} held out) to {}",
        corpus.documents.len(),
        corpus.queries.len(),
        corpus.test_queries.len(),
        out.display()
    );
    Ok(())
}
