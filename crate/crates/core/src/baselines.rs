//! Exact-match baselines: Okapi BM25 and Dirichlet-smoothed query
//! likelihood. Both score the full document body.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::Document;
use crate::run::Run;

/// Background mass for query terms that never occur in the collection.
pub const QL_EPSILON: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("collection is empty")]
    EmptyCollection,
    #[error("collection has no terms")]
    NoTerms,
}

/// Document and collection frequencies over full document bodies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CollectionStats {
    pub num_docs: usize,
    pub avgdl: f64,
    pub df: HashMap<String, u64>,
    pub cf: HashMap<String, u64>,
    pub total_terms: u64,
}

impl CollectionStats {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut stats = CollectionStats::default();
        for doc in docs {
            stats.num_docs += 1;
            stats.total_terms += doc.tokens.len() as u64;
            let mut seen = std::collections::HashSet::new();
            for t in &doc.tokens {
                *stats.cf.entry(t.clone()).or_insert(0) += 1;
                if seen.insert(t.as_str()) {
                    *stats.df.entry(t.clone()).or_insert(0) += 1;
                }
            }
        }
        if stats.num_docs > 0 {
            stats.avgdl = stats.total_terms as f64 / stats.num_docs as f64;
        }
        stats
    }

    pub fn df(&self, term: &str) -> u64 {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn cf(&self, term: &str) -> u64 {
        self.cf.get(term).copied().unwrap_or(0)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

fn term_frequencies(doc: &[String]) -> HashMap<&str, u64> {
    let mut tf = HashMap::new();
    for t in doc {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    tf
}

/// Repeated query terms contribute once per occurrence.
pub fn bm25_score(
    query: &[String],
    doc: &[String],
    stats: &CollectionStats,
    params: Bm25Params,
) -> Result<f64, BaselineError> {
    if stats.num_docs == 0 {
        return Err(BaselineError::EmptyCollection);
    }
    let tf = term_frequencies(doc);
    let norm = 1.0 - params.b + params.b * doc.len() as f64 / stats.avgdl;
    Ok(query
        .iter()
        .filter_map(|t| {
            let f = *tf.get(t.as_str())? as f64;
            Some(stats.idf(t) * f * (params.k1 + 1.0) / (f + params.k1 * norm))
        })
        .sum())
}

/// Log query likelihood under Dirichlet smoothing with prior `mu`.
pub fn ql_score(
    query: &[String],
    doc: &[String],
    stats: &CollectionStats,
    mu: f64,
) -> Result<f64, BaselineError> {
    if stats.total_terms == 0 {
        return Err(BaselineError::NoTerms);
    }
    let tf = term_frequencies(doc);
    let dl = doc.len() as f64;
    Ok(query
        .iter()
        .map(|t| {
            let f = tf.get(t.as_str()).copied().unwrap_or(0) as f64;
            let cf = stats.cf(t);
            let background = if cf == 0 {
                QL_EPSILON
            } else {
                mu * cf as f64 / stats.total_terms as f64
            };
            ((f + background) / (dl + mu)).ln()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    Bm25(Bm25Params),
    Ql { mu: f64 },
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Bm25(_) => "bm25",
            Baseline::Ql { .. } => "ql",
        }
    }

    pub fn score(
        &self,
        query: &[String],
        doc: &[String],
        stats: &CollectionStats,
    ) -> Result<f64, BaselineError> {
        match *self {
            Baseline::Bm25(p) => bm25_score(query, doc, stats, p),
            Baseline::Ql { mu } => ql_score(query, doc, stats, mu),
        }
    }
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(Baseline::Bm25(Bm25Params::default())),
            "ql" => Ok(Baseline::Ql { mu: 1500.0 }),
            other => Err(format!("unknown baseline {other:?} (expected bm25|ql)")),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scores `candidates` for one query and ranks them by descending score,
/// ties by ascending doc_id.
pub fn rank_collection<'a>(
    scorer: &Baseline,
    query: &[String],
    candidates: impl IntoIterator<Item = &'a Document>,
    stats: &CollectionStats,
) -> Result<Vec<(String, f64)>, BaselineError> {
    let mut scored = candidates
        .into_iter()
        .map(|d| Ok((d.doc_id.clone(), scorer.score(query, &d.tokens, stats)?)))
        .collect::<Result<Vec<_>, BaselineError>>()?;
    crate::run::sort_ranking(&mut scored);
    Ok(scored)
}

/// Builds a run for `queries`, each ranked over its candidate documents.
pub fn baseline_run<'a>(
    scorer: &Baseline,
    tag: &str,
    queries: impl IntoIterator<Item = (&'a str, &'a [String], Vec<&'a Document>)>,
    stats: &CollectionStats,
) -> Result<Run, BaselineError> {
    let mut run = Run::new(tag);
    for (qid, terms, docs) in queries {
        let ranked = rank_collection(scorer, terms, docs, stats)?;
        run.rankings.insert(qid.to_string(), ranked);
    }
    Ok(run)
}
