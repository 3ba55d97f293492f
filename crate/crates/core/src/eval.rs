//! NDCG evaluation of run files, paired significance tests, and the
//! per-query analyses: slicing by query length or term rarity, and PCA of
//! per-query performance vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::{Qrels, Query};
use crate::run::Run;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("rank cutoff must be at least 1")]
    ZeroCutoff,
    #[error("{0} common queries; at least {1} required")]
    TooFewQueries(usize, usize),
    #[error("{0} runs; at least {1} required")]
    TooFewRuns(usize, usize),
    #[error("invalid statistic: {0}")]
    Statistic(String),
}

/// Gain `2^label - 1`.
pub fn gain(label: u8) -> f64 {
    f64::from((1u32 << label) - 1)
}

/// Discounted cumulative gain of the first `k` labels, discount
/// `log2(i + 1)` for 1-based position `i`.
pub fn dcg_at_k(labels: &[u8], k: usize) -> f64 {
    labels
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &l)| gain(l) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k with the ideal taken from `labels` themselves. `None` when the
/// ideal gain is zero.
pub fn ndcg_at_k(labels: &[u8], k: usize) -> Result<Option<f64>, EvalError> {
    ndcg_with_ideal(labels, labels, k)
}

/// NDCG@k of `ranked`, normalized by the best ordering of `pool`.
pub fn ndcg_with_ideal(ranked: &[u8], pool: &[u8], k: usize) -> Result<Option<f64>, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    let mut ideal = pool.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(None);
    }
    Ok(Some(dcg_at_k(ranked, k) / idcg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ndcg1,
    Ndcg10,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ndcg1" | "ndcg@1" => Ok(Metric::Ndcg1),
            "ndcg10" | "ndcg@10" => Ok(Metric::Ndcg10),
            other => Err(format!("unknown metric {other:?} (expected ndcg1|ndcg10)")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ndcg1 => "ndcg1",
            Metric::Ndcg10 => "ndcg10",
        })
    }
}

/// Per-query NDCG@1 and NDCG@10 for one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunResult {
    pub run_tag: String,
    pub per_query: BTreeMap<String, (f64, f64)>,
    /// Queries whose judgments carry no gain.
    pub zero_ideal: Vec<String>,
    /// Queries in the run with no judgments at all.
    pub unjudged_queries: Vec<String>,
    /// Ranked documents without a judgment, scored as label 0.
    pub unjudged_docs: usize,
}

impl RunResult {
    pub fn value(&self, query_id: &str, metric: Metric) -> Option<f64> {
        self.per_query.get(query_id).map(|&(a, b)| match metric {
            Metric::Ndcg1 => a,
            Metric::Ndcg10 => b,
        })
    }

    /// Arithmetic means of NDCG@1 and NDCG@10 over included queries.
    pub fn means(&self) -> (f64, f64) {
        let n = self.per_query.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let (a, b) = self
            .per_query
            .values()
            .fold((0.0, 0.0), |(x, y), &(a, b)| (x + a, y + b));
        (a / n as f64, b / n as f64)
    }

    pub fn mean(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Ndcg1 => self.means().0,
            Metric::Ndcg10 => self.means().1,
        }
    }

    /// `query_id<TAB>ndcg1<TAB>ndcg10` rows plus a trailing `MEAN` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, (a, b)) in &self.per_query {
            out.push_str(&format!("{q}\t{a:.6}\t{b:.6}\n"));
        }
        let (a, b) = self.means();
        out.push_str(&format!("MEAN\t{a:.6}\t{b:.6}\n"));
        out
    }
}

/// Scores `run` against `qrels`. The ideal ordering for each query comes
/// from all its judgments, not only the ranked documents.
pub fn evaluate_run(run: &Run, qrels: &Qrels) -> RunResult {
    let mut result = RunResult {
        run_tag: run.tag.clone(),
        ..RunResult::default()
    };
    for (q, ranking) in &run.rankings {
        let Some(judged) = qrels.for_query(q) else {
            result.unjudged_queries.push(q.clone());
            continue;
        };
        let labels: Vec<u8> = ranking
            .iter()
            .map(|(d, _)| match judged.get(d) {
                Some(r) => r.level(),
                None => {
                    result.unjudged_docs += 1;
                    0
                }
            })
            .collect();
        let pool: Vec<u8> = judged.values().map(|r| r.level()).collect();
        match (
            ndcg_with_ideal(&labels, &pool, 1).expect("k >= 1"),
            ndcg_with_ideal(&labels, &pool, 10).expect("k >= 1"),
        ) {
            (Some(a), Some(b)) => {
                result.per_query.insert(q.clone(), (a, b));
            }
            _ => result.zero_ideal.push(q.clone()),
        }
    }
    if !result.unjudged_queries.is_empty() {
        log::warn!(
            "run {}: {} queries have no judgments and were excluded",
            run.tag,
            result.unjudged_queries.len()
        );
    }
    if result.unjudged_docs > 0 {
        log::warn!(
            "run {}: {} ranked documents are unjudged and scored as 0",
            run.tag,
            result.unjudged_docs
        );
    }
    if !result.zero_ideal.is_empty() {
        log::info!(
            "run {}: {} queries with zero ideal gain excluded: {:?}",
            run.tag,
            result.zero_ideal.len(),
            result.zero_ideal
        );
    }
    result
}

/// Two-sided paired t-test over per-query differences `a - b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p: f64,
    /// `0.05 / num_comparisons`.
    pub threshold: f64,
    pub significant: bool,
}

pub fn paired_ttest(
    a: &RunResult,
    b: &RunResult,
    metric: Metric,
    num_comparisons: usize,
) -> Result<TTest, EvalError> {
    let diffs: Vec<f64> = a
        .per_query
        .keys()
        .filter_map(|q| Some(a.value(q, metric)? - b.value(q, metric)?))
        .collect();
    if diffs.len() != a.per_query.len() || diffs.len() != b.per_query.len() {
        log::warn!(
            "runs {} and {} cover different queries; testing {} common ones",
            a.run_tag,
            b.run_tag,
            diffs.len()
        );
    }
    paired_ttest_diffs(&diffs, num_comparisons)
}

pub fn paired_ttest_diffs(diffs: &[f64], num_comparisons: usize) -> Result<TTest, EvalError> {
    let n = diffs.len();
    if n < 2 {
        return Err(EvalError::TooFewQueries(n, 2));
    }
    let threshold = 0.05 / num_comparisons.max(1) as f64;
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        }
    } else {
        let t = mean / (var / n as f64).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| EvalError::Statistic(e.to_string()))?;
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTest {
        n,
        mean_diff: mean,
        t,
        p,
        threshold,
        significant: p < threshold,
    })
}

/// Every pair of runs tested on `metric` with a Bonferroni correction over
/// the number of pairs.
pub fn compare_runs(
    results: &[RunResult],
    metric: Metric,
) -> Vec<(String, String, Result<TTest, EvalError>)> {
    let pairs = results.len() * results.len().saturating_sub(1) / 2;
    let mut out = Vec::with_capacity(pairs);
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            out.push((
                results[i].run_tag.clone(),
                results[j].run_tag.clone(),
                paired_ttest(&results[i], &results[j], metric, pairs),
            ));
        }
    }
    out
}

pub fn comparison_table(rows: &[(String, String, Result<TTest, EvalError>)]) -> String {
    let mut out = String::from("run_a\trun_b\tn\tmean_diff\tt\tp\tthreshold\tsignificant\n");
    for (a, b, r) in rows {
        match r {
            Ok(t) => out.push_str(&format!(
                "{a}\t{b}\t{}\t{:.6}\t{:.4}\t{:.6}\t{:.6}\t{}\n",
                t.n,
                t.mean_diff,
                t.t,
                t.p,
                t.threshold,
                if t.significant { "yes" } else { "no" }
            )),
            Err(e) => out.push_str(&format!("{a}\t{b}\t-\t-\t-\t-\t-\t{e}\n")),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    QueryLength,
    RarestTerm,
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query_length" | "length" => Ok(Grouping::QueryLength),
            "rarest_term_bucket" | "rarity" => Ok(Grouping::RarestTerm),
            other => Err(format!(
                "unknown grouping {other:?} (expected length|rarity)"
            )),
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::QueryLength => "query_length",
            Grouping::RarestTerm => "rarest_term_bucket",
        })
    }
}

/// Upper bounds (inclusive) of the rarity bands after "unseen".
pub const RARITY_BANDS: [(u64, &str); 5] = [
    (10, "1-10"),
    (100, "11-100"),
    (1000, "101-1000"),
    (10_000, "1001-10000"),
    (u64::MAX, ">10000"),
];

/// Band label for a training occurrence count.
pub fn rarity_band(count: u64) -> &'static str {
    if count == 0 {
        return "unseen";
    }
    RARITY_BANDS
        .iter()
        .find(|(hi, _)| count <= *hi)
        .map(|(_, l)| *l)
        .expect("last band is unbounded")
}

/// Occurrences of each term across `queries`.
pub fn term_counts<'a>(queries: impl IntoIterator<Item = &'a Query>) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for q in queries {
        for t in &q.tokens {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceBucket {
    pub label: String,
    pub count: usize,
    /// Mean metric per run, `None` for an empty bucket.
    pub means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceReport {
    pub grouping: Grouping,
    pub metric: Metric,
    pub run_tags: Vec<String>,
    pub buckets: Vec<SliceBucket>,
}

impl SliceReport {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\tcount", self.grouping);
        for t in &self.run_tags {
            out.push_str(&format!("\t{t}"));
        }
        out.push('\n');
        for b in &self.buckets {
            out.push_str(&format!("{}\t{}", b.label, b.count));
            for m in &b.means {
                match m {
                    Some(v) => out.push_str(&format!("\t{v:.6}")),
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Groups the queries every run scored and averages `metric` per group.
pub fn slice_report(
    results: &[RunResult],
    queries: &BTreeMap<String, Query>,
    training_counts: &HashMap<String, u64>,
    grouping: Grouping,
    metric: Metric,
) -> SliceReport {
    let labels: Vec<String> = match grouping {
        Grouping::QueryLength => (0..10)
            .map(|n| n.to_string())
            .chain(["10+".to_string()])
            .collect(),
        Grouping::RarestTerm => std::iter::once("unseen")
            .chain(RARITY_BANDS.iter().map(|(_, l)| *l))
            .map(str::to_string)
            .collect(),
    };
    let mut members: Vec<Vec<&str>> = vec![Vec::new(); labels.len()];
    for q in common_queries(results) {
        let Some(query) = queries.get(q) else {
            log::warn!("query {q} has no text; left out of the slice report");
            continue;
        };
        let label = match grouping {
            Grouping::QueryLength => match query.tokens.len() {
                n if n >= 10 => "10+".to_string(),
                n => n.to_string(),
            },
            Grouping::RarestTerm => {
                let rarest = query
                    .tokens
                    .iter()
                    .map(|t| training_counts.get(t).copied().unwrap_or(0))
                    .min()
                    .unwrap_or(0);
                rarity_band(rarest).to_string()
            }
        };
        let i = labels
            .iter()
            .position(|l| *l == label)
            .expect("label exists");
        members[i].push(q);
    }
    let buckets = labels
        .into_iter()
        .zip(members)
        .filter(|(l, m)| grouping == Grouping::RarestTerm || !m.is_empty() || l != "0")
        .map(|(label, m)| SliceBucket {
            count: m.len(),
            means: results
                .iter()
                .map(|r| {
                    (!m.is_empty()).then(|| {
                        m.iter().map(|q| r.value(q, metric).unwrap()).sum::<f64>() / m.len() as f64
                    })
                })
                .collect(),
            label,
        })
        .collect();
    SliceReport {
        grouping,
        metric,
        run_tags: results.iter().map(|r| r.run_tag.clone()).collect(),
        buckets,
    }
}

fn common_queries(results: &[RunResult]) -> Vec<&str> {
    let Some(first) = results.first() else {
        return Vec::new();
    };
    first
        .per_query
        .keys()
        .filter(|q| results.iter().all(|r| r.per_query.contains_key(*q)))
        .map(String::as_str)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// `(run_tag, pc1, pc2)` in input order.
    pub coords: Vec<(String, f64, f64)>,
    pub queries: Vec<String>,
    /// Variance along each component.
    pub eigenvalues: [f64; 2],
    /// All runs identical; both components are zero.
    pub degenerate: bool,
}

impl PcaResult {
    pub fn to_tsv(&self) -> String {
        self.coords
            .iter()
            .map(|(t, a, b)| format!("{t}\t{a:.6}\t{b:.6}\n"))
            .collect()
    }
}

const PCA_TOLERANCE: f64 = 1e-9;
const PCA_MAX_ITERS: usize = 200_000;

/// Projects every run onto the top two principal components of the
/// run-by-query performance matrix over a seeded sample of common queries.
pub fn performance_pca(
    results: &[RunResult],
    metric: Metric,
    sample_size: usize,
    seed: u64,
) -> Result<PcaResult, EvalError> {
    if results.len() < 3 {
        return Err(EvalError::TooFewRuns(results.len(), 3));
    }
    let common = common_queries(results);
    if common.len() < 3 {
        return Err(EvalError::TooFewQueries(common.len(), 3));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: BTreeSet<usize> = if sample_size >= common.len() {
        (0..common.len()).collect()
    } else {
        sample(&mut rng, common.len(), sample_size)
            .into_iter()
            .collect()
    };
    let queries: Vec<String> = picked.iter().map(|&i| common[i].to_string()).collect();
    let rows: Vec<Vec<f64>> = results
        .iter()
        .map(|r| {
            queries
                .iter()
                .map(|q| r.value(q, metric).unwrap())
                .collect()
        })
        .collect();
    let (coords, eigenvalues, degenerate) = pca_2d(&rows, &mut rng);
    Ok(PcaResult {
        coords: results
            .iter()
            .zip(coords)
            .map(|(r, (a, b))| (r.run_tag.clone(), a, b))
            .collect(),
        queries,
        eigenvalues,
        degenerate,
    })
}

/// Top-two principal component scores of the rows of `x`, by power
/// iteration with deflation on the column covariance. Each component's
/// sign is fixed so that its largest-magnitude coordinate is positive.
pub fn pca_2d<R: Rng + ?Sized>(x: &[Vec<f64>], rng: &mut R) -> (Vec<(f64, f64)>, [f64; 2], bool) {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let mut means = vec![0.0; d];
    for row in x {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&means).map(|(v, m)| v - m).collect())
        .collect();
    let denom = (n.max(2) - 1) as f64;
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            if r[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i][j] += r[i] * r[j] / denom;
            }
        }
    }
    let scale = cov.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let start: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut components = Vec::with_capacity(2);
    let mut eigenvalues = [0.0; 2];
    for ev in eigenvalues.iter_mut() {
        match power_iteration(&cov, &start, scale) {
            Some((lambda, v)) => {
                for i in 0..d {
                    for j in 0..d {
                        cov[i][j] -= lambda * v[i] * v[j];
                    }
                }
                *ev = lambda;
                components.push(v);
            }
            None => components.push(vec![0.0; d]),
        }
    }
    let coords = centered
        .iter()
        .map(|r| (dot(r, &components[0]), dot(r, &components[1])))
        .collect();
    (coords, eigenvalues, eigenvalues[0] == 0.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn normalize_signed(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = dot(&v, &v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    let s = pivot.signum() / norm;
    v.iter_mut().for_each(|x| *x *= s);
    Some(v)
}

/// Dominant eigenpair of the symmetric positive semidefinite `m`, or `None`
/// when `m` is numerically zero relative to `scale`.
fn power_iteration(m: &[Vec<f64>], start: &[f64], scale: f64) -> Option<(f64, Vec<f64>)> {
    if scale == 0.0 {
        return None;
    }
    let mut v = normalize_signed(start.to_vec())?;
    for _ in 0..PCA_MAX_ITERS {
        let next = normalize_signed(matvec(m, &v))?;
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if delta < PCA_TOLERANCE {
            break;
        }
    }
    let lambda = dot(&v, &matvec(m, &v));
    (lambda > scale * 1e-12).then_some((lambda, v))
}
