//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Learning criteria run the `duet` binary end to end.

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use duet::autodiff::checkpoint::{self, CheckpointMeta};
use duet::autodiff::{
    gradient_check, gradient_check_params, softmax, Mode, ParamSet, Tape, Tensor, Var,
};
use duet::baselines::{bm25_score, ql_score, Bm25Params, CollectionStats, QL_EPSILON};
use duet::corpus::{Document, TermSequence, PAD};
use duet::eval::{ndcg_at_k, pca_2d};
use duet::featurize::{build_ngraph_vocabulary, interaction_matrix, NGraphVocabulary};
use duet::models::{
    ranking_loss, DocInput, DuetModel, Featurizer, ModelConfig, ModelError, ModelKind,
};
use duet::run::Run;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        // Negated so that NaN metrics fail the check.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let failed = !($cond);
        if failed {
            return Err(format!($($msg)+));
        }
    }};
}

fn duet(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_duet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "duet {} exited with {}: {}",
            args.first().unwrap_or(&""),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

fn readout(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        query_len: 3,
        doc_len: 8,
        local_filters: 4,
        vocab_size: 10,
        max_ngraph: 3,
        conv_window: 3,
        dist_filters: 4,
        doc_pool: 2,
        hidden: 5,
        dropout: 0.2,
        numneg: 4,
    }
}

fn tiny_vocab() -> NGraphVocabulary {
    let docs = [Document::new("d", "cab abc bca aab cca bbc")];
    build_ngraph_vocabulary(&docs, 3, 10).unwrap()
}

fn tiny_docs(f: &Featurizer<'_>) -> Vec<DocInput> {
    [
        "cab abc bca aab",
        "aab cca bbc abc cab bca",
        "bbc cca",
        "abc abc abc",
        "cca aab bbc bca",
    ]
    .iter()
    .map(|s| f.doc(&words(s)))
    .collect()
}

fn unwrap_autodiff(e: ModelError) -> duet::autodiff::AutodiffError {
    match e {
        ModelError::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let mut ps = ParamSet::new();
    ps.insert("x", random_tensor(&[6], &mut rng));
    ps.insert("w", random_tensor(&[6, 4], &mut rng));
    ps.insert("b", random_tensor(&[4], &mut rng));
    let e = gradient_check_params(&mut ps, 1e-3, |t| {
        let (x, w, b) = (t.param("x")?, t.param("w")?, t.param("b")?);
        let y = t.affine(x, w, b)?;
        t.dot(y, &readout(4, 2))
    })
    .map_err(|e| e.to_string())?;
    worst.push(("affine", e));

    let mut ps = ParamSet::new();
    ps.insert("x", random_tensor(&[5, 10], &mut rng));
    ps.insert("k", random_tensor(&[5, 3, 4], &mut rng));
    ps.insert("b", random_tensor(&[4], &mut rng));
    let e = gradient_check_params(&mut ps, 1e-3, |t| {
        let (x, k, b) = (t.param("x")?, t.param("k")?, t.param("b")?);
        let y = t.conv_seq(x, k, b)?;
        t.dot(y, &readout(32, 3))
    })
    .map_err(|e| e.to_string())?;
    worst.push(("conv_seq", e));

    // Distinct values 0.02 apart keep every window's argmax stable under eps.
    let mut grid: Vec<f64> = (0..48).map(|i| -0.5 + 0.02 * i as f64).collect();
    grid.shuffle(&mut rng);
    let x = Tensor::from_vec(vec![4, 12], grid).unwrap();
    let e = gradient_check(&x, 1e-3, |t, x| {
        let y = t.maxpool_seq(x, 5)?;
        t.dot(y, &readout(32, 5))
    })
    .map_err(|e| e.to_string())?;
    worst.push(("maxpool_seq", e));

    let x = random_tensor(&[3, 7], &mut rng);
    let e = gradient_check(&x, 1e-3, |t, x| {
        let y = t.tanh(x);
        t.dot(y, &readout(21, 7))
    })
    .map_err(|e| e.to_string())?;
    worst.push(("tanh", e));

    let x = random_tensor(&[20], &mut rng);
    let e = gradient_check(&x, 1e-3, |t, x| {
        let mut mask = ChaCha8Rng::seed_from_u64(99);
        let y = t.dropout(x, 0.2, Mode::Train, &mut mask)?;
        t.dot(y, &readout(20, 9))
    })
    .map_err(|e| e.to_string())?;
    worst.push(("dropout", e));

    let mut ps = ParamSet::new();
    ps.insert("q", random_tensor(&[4, 1], &mut rng));
    ps.insert("d", random_tensor(&[4, 6], &mut rng));
    let e = gradient_check_params(&mut ps, 1e-3, |t| {
        let (q, d) = (t.param("q")?, t.param("d")?);
        let y = t.hadamard_broadcast(q, d)?;
        t.dot(y, &readout(24, 11))
    })
    .map_err(|e| e.to_string())?;
    worst.push(("hadamard_broadcast", e));

    let x = random_tensor(&[5], &mut rng);
    let e = gradient_check(&x, 1e-3, |t, x| {
        let parts: Vec<Var> = (0..5)
            .map(|i| {
                let mut w = vec![0.0; 5];
                w[i] = 1.0 + i as f64;
                t.dot(x, &w)
            })
            .collect::<Result<_, _>>()?;
        let s = t.stack(&parts)?;
        t.softmax_nll(s)
    })
    .map_err(|e| e.to_string())?;
    worst.push(("stack+softmax_nll", e));

    let x = random_tensor(&[2, 3], &mut rng);
    let e = gradient_check(&x, 1e-3, |t, x| {
        let f = t.flatten(x)?;
        let y = t.tanh(f);
        let z = t.add(f, y)?;
        let z = t.scale(z, 0.7);
        t.dot(z, &readout(6, 13))
    })
    .map_err(|e| e.to_string())?;
    worst.push(("flatten+add+scale+dot", e));

    let cfg = tiny_config();
    let vocab = tiny_vocab();
    let f = Featurizer::new(&vocab, &cfg);
    let q = f.query(&words("abc cab bca"));
    let docs = tiny_docs(&f);
    let refs: Vec<&DocInput> = docs.iter().collect();
    let mut model = DuetModel::<f64>::new(cfg, ModelKind::Duet, 17).map_err(|e| e.to_string())?;
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".bias") {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = 0.05 * ((i % 3) as f64 - 1.0);
            }
        }
    }
    let e = gradient_check_params(&mut model.params, 1e-3, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        ranking_loss(t, &cfg, ModelKind::Duet, &q, &refs, Mode::Train, &mut rng)
            .map_err(unwrap_autodiff)
    })
    .map_err(|e| e.to_string())?;
    worst.push(("duet loss", e));

    let elapsed = start.elapsed();
    let (name, max) = worst
        .iter()
        .copied()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    ensure!(max < 1e-3, "{name} max relative error {max:e}");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{} checks, max relative error {max:.2e} ({name}), {:.1}s",
        worst.len(),
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let cfg = ModelConfig::default();
    let counts: HashMap<String, u64> = (0..cfg.vocab_size)
        .map(|i| (format!("#{i:04x}"), (cfg.vocab_size - i) as u64))
        .collect();
    let vocab = NGraphVocabulary::from_counts(counts, cfg.max_ngraph, cfg.vocab_size);
    ensure!(
        vocab.len() == 2000,
        "vocabulary has {} entries",
        vocab.len()
    );
    let model = DuetModel::<f32>::new(cfg, ModelKind::Duet, 0).map_err(|e| e.to_string())?;
    let f = Featurizer::new(&vocab, &cfg);
    let q = f.query(&words("solar eclipse dates"));
    let body: Vec<String> = (0..1200).map(|i| format!("w{}", i % 97)).collect();
    let trace = model
        .trace_shapes(&q, &f.doc(&body))
        .map_err(|e| e.to_string())?;
    let expected: [(&str, [usize; 2]); 5] = [
        ("local.conv", [300, 10]),
        ("dist.query_conv", [300, 8]),
        ("dist.query_pool", [300, 1]),
        ("dist.doc_conv", [300, 998]),
        ("dist.doc_pool", [300, 899]),
    ];
    for (name, shape) in expected {
        ensure!(
            trace.get(name) == Some(&shape[..]),
            "{name} is {:?}, expected {shape:?}",
            trace.get(name)
        );
    }
    Ok(format!(
        "local conv 300x10, query 300x8 -> 300x1, doc 300x998 -> 300x899 ({} parameters)",
        model.params.numel()
    ))
}

fn interaction_oracle_cases() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let alphabet = ["a", "b", "c", "dd"];
    let mut cases = 0;
    for nq in 1..=10 {
        for nd in 1..=20 {
            for _ in 0..5 {
                let qt: Vec<String> = (0..rng.random_range(0..=nq + 2))
                    .map(|_| alphabet[rng.random_range(0..4)].to_string())
                    .collect();
                let dt: Vec<String> = (0..rng.random_range(0..=nd + 2))
                    .map(|_| alphabet[rng.random_range(0..4)].to_string())
                    .collect();
                let m =
                    interaction_matrix(&TermSequence::new(&qt, nq), &TermSequence::new(&dt, nd));
                ensure!(
                    m.doc_len() == nd && m.query_len() == nq,
                    "shape for {nd}x{nq}"
                );
                for i in 0..nd {
                    for j in 0..nq {
                        let want = u8::from(i < dt.len() && j < qt.len() && dt[i] == qt[j]);
                        ensure!(m.get(i, j) == want, "entry ({i},{j}) of {dt:?} vs {qt:?}");
                    }
                }
                cases += 1;
            }
        }
    }
    ensure!(PAD.is_empty(), "padding token is not empty");
    Ok(cases)
}

fn ndcg_oracle(labels: &[u8], k: usize) -> Option<f64> {
    let dcg = |ls: &[u8]| -> f64 {
        let mut s = 0.0;
        for (i, &l) in ls.iter().enumerate() {
            if i >= k {
                break;
            }
            s += (2f64.powi(l as i32) - 1.0) / (i as f64 + 2.0).log2();
        }
        s
    };
    let mut ideal = labels.to_vec();
    ideal.sort_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal);
    (idcg > 0.0).then(|| dcg(labels) / idcg)
}

fn ranking_oracles() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..10_000 {
        let n = rng.random_range(0..15);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let k = rng.random_range(1..13);
        let got = ndcg_at_k(&labels, k).map_err(|e| e.to_string())?;
        let want = ndcg_oracle(&labels, k);
        match (got, want) {
            (None, None) => {}
            (Some(a), Some(b)) => ensure!((a - b).abs() < 1e-9, "ndcg {labels:?}@{k}: {a} vs {b}"),
            _ => return Err(format!("ndcg {labels:?}@{k}: {got:?} vs {want:?}")),
        }
    }

    let vocab = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta"];
    for case in 0..100 {
        let docs: Vec<Document> = (0..rng.random_range(1..8))
            .map(|i| {
                let len = rng.random_range(1..12);
                let body: Vec<&str> = (0..len)
                    .map(|_| vocab[rng.random_range(0..vocab.len())])
                    .collect();
                Document::new(format!("d{i}"), body.join(" "))
            })
            .collect();
        let stats = CollectionStats::build(&docs);
        let query: Vec<String> = (0..rng.random_range(1..4))
            .map(|_| {
                if rng.random_bool(0.15) {
                    "unseen".to_string()
                } else {
                    vocab[rng.random_range(0..vocab.len())].to_string()
                }
            })
            .collect();
        let params = Bm25Params {
            k1: rng.random_range(0.5..2.0),
            b: rng.random_range(0.0..1.0),
        };
        let mu = rng.random_range(10.0..3000.0);
        let n = docs.len() as f64;
        let total: usize = docs.iter().map(|d| d.tokens.len()).sum();
        let avgdl = total as f64 / n;
        for d in &docs {
            let dl = d.tokens.len() as f64;
            let mut bm25 = 0.0;
            let mut ql = 0.0;
            for t in &query {
                let tf = d.tokens.iter().filter(|x| *x == t).count() as f64;
                let df = docs.iter().filter(|o| o.tokens.contains(t)).count() as f64;
                let cf: usize = docs
                    .iter()
                    .map(|o| o.tokens.iter().filter(|x| *x == t).count())
                    .sum();
                if tf > 0.0 {
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    bm25 += idf * tf * (params.k1 + 1.0)
                        / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl));
                }
                let bg = if cf == 0 {
                    QL_EPSILON
                } else {
                    mu * cf as f64 / total as f64
                };
                ql += ((tf + bg) / (dl + mu)).ln();
            }
            let got_bm25 =
                bm25_score(&query, &d.tokens, &stats, params).map_err(|e| e.to_string())?;
            let got_ql = ql_score(&query, &d.tokens, &stats, mu).map_err(|e| e.to_string())?;
            ensure!(
                (got_bm25 - bm25).abs() < 1e-6,
                "bm25 case {case}: {got_bm25} vs {bm25}"
            );
            ensure!(
                (got_ql - ql).abs() < 1e-6,
                "ql case {case}: {got_ql} vs {ql}"
            );
        }
    }
    Ok(())
}

fn pca_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for trial in 0..5 {
        let (runs, queries) = (6, 40);
        let x: Vec<Vec<f64>> = (0..runs)
            .map(|_| (0..queries).map(|_| rng.random::<f64>()).collect())
            .collect();
        let (coords, eig, degenerate) = pca_2d(&x, &mut rng);
        ensure!(!degenerate, "trial {trial} reported degenerate");
        let m = DMatrix::from_fn(runs, queries, |i, j| x[i][j]);
        let mean = m.row_mean();
        let c = DMatrix::from_fn(runs, queries, |i, j| m[(i, j)] - mean[j]);
        let cov = c.transpose() * &c / (runs - 1) as f64;
        let e = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..queries).collect();
        order.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]));
        for (k, &idx) in order.iter().take(2).enumerate() {
            ensure!(
                (eig[k] - e.eigenvalues[idx]).abs() < 1e-6,
                "trial {trial} eigenvalue {k}: {} vs {}",
                eig[k],
                e.eigenvalues[idx]
            );
            let proj = &c * e.eigenvectors.column(idx);
            let ours: Vec<f64> = coords
                .iter()
                .map(|p| if k == 0 { p.0 } else { p.1 })
                .collect();
            let agree: f64 = ours.iter().zip(proj.iter()).map(|(a, b)| a * b).sum();
            let sign = if agree < 0.0 { -1.0 } else { 1.0 };
            for i in 0..runs {
                ensure!(
                    (ours[i] - sign * proj[i]).abs() < 1e-6,
                    "trial {trial} component {k} run {i}: {} vs {}",
                    ours[i],
                    sign * proj[i]
                );
            }
        }
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let cases = interaction_oracle_cases()?;
    ranking_oracles()?;
    pca_oracle()?;
    Ok(format!(
        "interaction matrix {cases} cases up to 10x20, NDCG 10^4 cases, BM25/QL 100 collections, PCA 5 trials"
    ))
}

fn criterion_4() -> Outcome {
    let cfg = tiny_config();
    let vocab = tiny_vocab();
    let f = Featurizer::new(&vocab, &cfg);
    let q = f.query(&words("abc cab bca"));
    let docs = tiny_docs(&f);
    let refs: Vec<&DocInput> = docs.iter().collect();

    let mut zero = DuetModel::<f32>::new(cfg, ModelKind::Duet, 0).map_err(|e| e.to_string())?;
    for (_, t) in zero.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut tape = Tape::with_shared_params(&zero.params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = ranking_loss(
        &mut tape,
        &cfg,
        ModelKind::Duet,
        &q,
        &refs,
        Mode::Eval,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let value = tape.scalar(loss).map_err(|e| e.to_string())? as f64;
    ensure!(
        (value - 5f64.ln()).abs() < 1e-5,
        "uniform loss {value}, expected ln 5"
    );

    let model = DuetModel::<f32>::new(cfg, ModelKind::Duet, 3).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = docs
        .iter()
        .map(|d| model.score(&q, d).map(|s| s.total()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut worst = (softmax(&scores).iter().sum::<f64>() - 1.0).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..1000 {
        let s: Vec<f64> = (0..5).map(|_| rng.random_range(-40.0..40.0)).collect();
        worst = worst.max((softmax(&s).iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(worst < 1e-6, "posterior sum off by {worst:e}");
    Ok(format!(
        "uniform loss {value:.7} (ln 5 = {:.7}), posterior sums within {worst:.1e}",
        5f64.ln()
    ))
}

/// Trains one model on a synthetic corpus, ranks the held-out candidates
/// and returns (NDCG@1, NDCG@10, training time).
fn learn(corpus: &Path, mode: &str, work: &Path) -> Result<(f64, f64, Duration), String> {
    let model = work.join(format!("{mode}-model"));
    let ranked = work.join(format!("{mode}-run"));
    let evald = work.join(format!("{mode}-eval"));
    let start = Instant::now();
    duet(&[
        "train",
        "--config",
        p(&corpus.join("experiment.cfg")),
        "--mode",
        mode,
        "--out",
        p(&model),
    ])?;
    let took = start.elapsed();
    duet(&[
        "rank",
        "--checkpoint",
        p(&model.join("model.ckpt")),
        "--queries",
        p(&corpus.join("test_queries.tsv")),
        "--documents",
        p(&corpus.join("documents.tsv")),
        "--candidates",
        p(&corpus.join("test_candidates.tsv")),
        "--out",
        p(&ranked),
    ])?;
    duet(&[
        "eval",
        "--run",
        p(&ranked.join("run.tsv")),
        "--qrels",
        p(&corpus.join("test_qrels.tsv")),
        "--out",
        p(&evald),
    ])?;
    let summary = fs::read_to_string(evald.join("summary.tsv")).map_err(|e| e.to_string())?;
    let row: Vec<&str> = summary
        .lines()
        .nth(1)
        .ok_or("empty summary")?
        .split('\t')
        .collect();
    let a: f64 = row[2].parse().map_err(|_| "bad ndcg1")?;
    let b: f64 = row[3].parse().map_err(|_| "bad ndcg10")?;
    Ok((a, b, took))
}

fn synth(kind: &str, seed: u64, dir: &Path, queries: Option<usize>) -> Result<(), String> {
    let seed = seed.to_string();
    let mut args = vec!["synth", "--kind", kind, "--seed", &seed, "--out", p(dir)];
    let q = queries.map(|n| n.to_string());
    if let Some(q) = &q {
        args.extend(["--queries", q.as_str()]);
    }
    duet(&args).map(|_| ())
}

fn criterion_5(work: &Path) -> Outcome {
    let limit = Duration::from_secs(300);
    let mut notes = Vec::new();
    let mut failures = Vec::new();

    let exact = work.join("exact");
    synth("exact", 0, &exact, None)?;
    let docs = fs::read_to_string(exact.join("documents.tsv")).map_err(|e| e.to_string())?;
    ensure!(
        docs.lines().count() == 500,
        "exact corpus has {} documents",
        docs.lines().count()
    );
    let (n1, _, t) = learn(&exact, "local", &exact)?;
    notes.push(format!("exact local {n1:.3} ({:.0}s)", t.as_secs_f64()));
    if n1 < 0.9 || t > limit {
        failures.push("exact local");
    }

    let syn = work.join("synonym");
    synth("synonym", 0, &syn, None)?;
    let (d1, _, td) = learn(&syn, "distributed", &syn)?;
    let (l1, _, tl) = learn(&syn, "local", &syn)?;
    notes.push(format!(
        "synonym distributed {d1:.3} ({:.0}s) local {l1:.3} ({:.0}s)",
        td.as_secs_f64(),
        tl.as_secs_f64()
    ));
    if d1 < 0.9 || l1 > 0.6 || td > limit || tl > limit {
        failures.push("synonym");
    }

    let mixed = work.join("mixed");
    synth("mixed", 0, &mixed, None)?;
    let (_, duet10, t1) = learn(&mixed, "duet", &mixed)?;
    let (_, loc10, t2) = learn(&mixed, "local", &mixed)?;
    let (_, dist10, t3) = learn(&mixed, "distributed", &mixed)?;
    notes.push(format!(
        "mixed NDCG@10 duet {duet10:.3} ({:.0}s) local {loc10:.3} distributed {dist10:.3}",
        t1.as_secs_f64()
    ));
    if duet10 < loc10 + 0.02 || duet10 < dist10 + 0.02 || [t1, t2, t3].iter().any(|t| *t > limit) {
        failures.push("mixed");
    }

    let detail = notes.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} below target: {detail}", failures.join(", ")))
    }
}

fn final_val_ndcg1(report: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(report).map_err(|e| e.to_string())?;
    let last = text.lines().last().ok_or("empty report")?;
    last.split('\t')
        .nth(2)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("no validation NDCG@1 in {last:?}"))
}

fn criterion_6(work: &Path) -> Outcome {
    let corpus = work.join("confusable");
    synth("confusable", 0, &corpus, None)?;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let s = seed.to_string();
        let mut v = [0.0; 2];
        for (slot, neg) in ["judged", "random"].iter().enumerate() {
            let out = work.join(format!("conf-{neg}-{seed}"));
            duet(&[
                "train",
                "--config",
                p(&corpus.join("experiment.cfg")),
                "--mode",
                "local",
                "--negatives",
                neg,
                "--seed",
                &s,
                "--out",
                p(&out),
            ])?;
            v[slot] = final_val_ndcg1(&out.join("train_report.tsv"))?;
        }
        if v[0] > v[1] {
            wins += 1;
        }
        pairs.push(format!("{:.3}/{:.3}", v[0], v[1]));
    }
    let detail = format!(
        "judged beats random in {wins}/5 seeds (judged/random: {})",
        pairs.join(" ")
    );
    ensure!(wins >= 3, "{detail}");
    Ok(detail)
}

fn criterion_7(work: &Path) -> Outcome {
    let corpus = work.join("exact");
    if !corpus.join("experiment.cfg").exists() {
        synth("exact", 0, &corpus, None)?;
    }
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let out = work.join(format!("determinism-{run}"));
        duet(&[
            "train",
            "--config",
            p(&corpus.join("experiment.cfg")),
            "--epochs",
            "2",
            "--checkpoint-every",
            "25",
            "--out",
            p(&out),
        ])?;
        dirs.push(out);
    }
    let read = |path: PathBuf| fs::read(&path).map_err(|e| format!("{}: {e}", path.display()));
    let a = read(dirs[0].join("model.ckpt"))?;
    let b = read(dirs[1].join("model.ckpt"))?;
    ensure!(a == b, "final checkpoints differ");
    let mut periodic = 0;
    for entry in fs::read_dir(dirs[0].join("checkpoints")).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        ensure!(
            read(dirs[0].join("checkpoints").join(&name))?
                == read(dirs[1].join("checkpoints").join(&name))?,
            "periodic checkpoint {name:?} differs"
        );
        periodic += 1;
    }
    ensure!(periodic > 0, "no periodic checkpoints written");
    ensure!(
        read(dirs[0].join("train_report.tsv"))? == read(dirs[1].join("train_report.tsv"))?,
        "training reports differ"
    );

    let (params, meta) = checkpoint::decode(&a).map_err(|e| e.to_string())?;
    ensure!(
        checkpoint::encode(&params, &meta).map_err(|e| e.to_string())? == a,
        "re-encoding the checkpoint changed its bytes"
    );
    let fresh = DuetModel::<f32>::new(ModelConfig::desk(), ModelKind::Duet, 11)
        .map_err(|e| e.to_string())?;
    let path = work.join("roundtrip.ckpt");
    let meta = CheckpointMeta::new(11, "desk");
    checkpoint::save(&path, &fresh.params, &meta).map_err(|e| e.to_string())?;
    let (back, back_meta) = checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure!(back_meta == meta, "metadata changed");
    ensure!(back.len() == fresh.params.len(), "tensor count changed");
    for (name, t) in fresh.params.iter() {
        let u = back
            .get(name)
            .ok_or_else(|| format!("{name} missing after load"))?;
        ensure!(u.shape() == t.shape(), "{name} shape changed");
        ensure!(
            u.data()
                .iter()
                .zip(t.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()),
            "{name} data changed"
        );
    }
    Ok(format!(
        "two trainings byte-identical ({} bytes, {periodic} periodic checkpoints); {} tensors round-trip bit-exactly",
        a.len(),
        fresh.params.len()
    ))
}

fn criterion_8(work: &Path) -> Outcome {
    let corpus = work.join("exact-large");
    synth("exact", 0, &corpus, Some(1560))?;
    let out = work.join("sweep");
    duet(&[
        "sweep",
        "--config",
        p(&corpus.join("experiment.cfg")),
        "--mode",
        "local",
        "--sizes",
        "128,512,2048",
        "--protocol",
        "both",
        "--out",
        p(&out),
    ])?;
    let summary = fs::read_to_string(out.join("sweep.tsv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = summary
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    ensure!(rows.len() == 6, "sweep.tsv has {} rows", rows.len());
    let mut curves: Vec<String> = Vec::new();
    for (protocol, dir) in [
        ("one-epoch", "one-epoch"),
        ("samples-seen=2048", "samples-seen-2048"),
    ] {
        let mut ndcg = Vec::new();
        for size in [128usize, 512, 2048] {
            let row = rows
                .iter()
                .find(|r| r[0] == protocol && r[1] == size.to_string())
                .ok_or_else(|| format!("no row for {protocol} size {size}"))?;
            ensure!(row.len() == 7, "malformed row {row:?}");
            let instances: usize = row[2].parse().map_err(|_| "bad instance count")?;
            ensure!(
                instances == size,
                "{protocol} size {size} trained on {instances} instances"
            );
            let epochs: usize = row[3].parse().map_err(|_| "bad epoch count")?;
            let want = if protocol == "one-epoch" {
                1
            } else {
                2048usize.div_ceil(size)
            };
            ensure!(
                epochs == want,
                "{protocol} size {size}: {epochs} epochs, expected {want}"
            );
            let point = out.join(dir).join(format!("size-{size}"));
            let report =
                fs::read_to_string(point.join("train_report.tsv")).map_err(|e| e.to_string())?;
            ensure!(
                report.starts_with("epoch\tmean_loss\tval_ndcg1\n")
                    && report.lines().count() == epochs + 1,
                "malformed report for {protocol} size {size}"
            );
            ensure!(
                point.join("config.cfg").exists(),
                "no config for {protocol} size {size}"
            );
            Run::read(&point.join("run.tsv")).map_err(|e| e.to_string())?;
            let metrics =
                fs::read_to_string(point.join("metrics.tsv")).map_err(|e| e.to_string())?;
            ensure!(
                metrics
                    .lines()
                    .last()
                    .is_some_and(|l| l.starts_with("MEAN\t")),
                "metrics for {protocol} size {size} lack a MEAN row"
            );
            ndcg.push(row[5].parse::<f64>().map_err(|_| "bad ndcg1")?);
        }
        let monotone = ndcg.windows(2).all(|w| w[1] >= w[0]);
        curves.push(format!(
            "{protocol}: {:.3} {:.3} {:.3}{}",
            ndcg[0],
            ndcg[1],
            ndcg[2],
            if monotone {
                " (monotone)"
            } else {
                " (not monotone)"
            }
        ));
    }
    Ok(format!(
        "NDCG@1 by size 128/512/2048, {}",
        curves.join("; ")
    ))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("gradient correctness", Box::new(criterion_1)),
        ("shape contract", Box::new(criterion_2)),
        ("oracle equivalence", Box::new(criterion_3)),
        ("loss semantics", Box::new(criterion_4)),
        ("learning at desk scale", Box::new(|| criterion_5(w))),
        ("judged vs random negatives", Box::new(|| criterion_6(w))),
        ("determinism", Box::new(|| criterion_7(w))),
        ("training-size sweep", Box::new(|| criterion_8(w))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.0}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why} [{secs:.0}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
