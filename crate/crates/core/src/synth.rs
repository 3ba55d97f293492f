//! Synthetic graded collections with controlled relevance signals.
//!
//! * `exact`: each query is two unique nonsense tokens; the excellent
//!   document contains both twice, the good document one of them once.
//! * `synonym`: queries and judged documents use different inflections of
//!   a shared stem, so they share character n-graphs but never a term.
//!   Each query has one excellent document carrying three inflections.
//! * `mixed`: half `exact` queries, half `synonym` queries. Exact queries
//!   also get bad documents holding a one-letter variant of a query token,
//!   which look similar at the n-graph level but never match exactly.
//! * `confusable`: like `exact`, plus fair documents holding each query
//!   token three times, all in the last 30% of the text. Fair documents
//!   outnumber the excellent one in matches; only position separates them.
//!
//! Every kind draws filler text from a small common vocabulary. Judged bad
//! documents never contain a query token, and for synonym queries never a
//! form of the query's stem.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    write_documents, write_qrels, write_queries, Collection, CorpusError, Document, Judgment,
    Query, Rating, RawDocument,
};

const FILLER: [&str; 40] = [
    "the", "of", "and", "to", "in", "is", "for", "on", "with", "as", "by", "at", "from", "this",
    "that", "it", "are", "was", "be", "or", "an", "which", "new", "more", "about", "other", "some",
    "time", "page", "home", "also", "year", "may", "use", "all", "one", "can", "has", "will",
    "not",
];

const SUFFIXES: [&str; 6] = ["", "s", "ed", "er", "ing", "ers"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Exact,
    Synonym,
    Mixed,
    Confusable,
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(SynthKind::Exact),
            "synonym" => Ok(SynthKind::Synonym),
            "mixed" => Ok(SynthKind::Mixed),
            "confusable" => Ok(SynthKind::Confusable),
            other => Err(format!(
                "unknown corpus kind {other:?} (expected exact|synonym|mixed|confusable)"
            )),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Exact => "exact",
            SynthKind::Synonym => "synonym",
            SynthKind::Mixed => "mixed",
            SynthKind::Confusable => "confusable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub queries: usize,
    /// Stems shared by synonym queries.
    pub families: usize,
    /// Shared documents used as bad judgments.
    pub bad_pool: usize,
    /// Bad judgments per query.
    pub bad_per_query: usize,
    pub test_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults sized per kind; `exact` yields 500 documents.
    pub fn new(kind: SynthKind, seed: u64) -> Self {
        let base = SynthConfig {
            kind,
            queries: 200,
            families: 16,
            bad_pool: 100,
            bad_per_query: 8,
            test_fraction: 1.0 / 3.0,
            min_len: 30,
            max_len: 90,
            seed,
        };
        match kind {
            SynthKind::Exact => base,
            SynthKind::Confusable => SynthConfig {
                queries: 300,
                ..base
            },
            SynthKind::Synonym => SynthConfig {
                queries: 480,
                bad_pool: 120,
                ..base
            },
            SynthKind::Mixed => SynthConfig {
                queries: 480,
                bad_pool: 120,
                ..base
            },
        }
    }
}

/// A generated collection with a train/test split over queries.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub documents: Vec<RawDocument>,
    pub queries: Vec<(String, String)>,
    pub judgments: Vec<Judgment>,
    pub train_queries: BTreeSet<String>,
    pub test_queries: BTreeSet<String>,
}

struct Gen {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Gen {
    fn word(&mut self, len: usize) -> String {
        loop {
            let w: String = (0..len)
                .map(|_| (b'a' + self.rng.random_range(0..26u8)) as char)
                .collect();
            if !FILLER.contains(&w.as_str()) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    /// `w` with its last letter changed.
    fn near_miss(&mut self, w: &str) -> String {
        let stem = &w[..w.len() - 1];
        loop {
            let c = (b'a' + self.rng.random_range(0..26u8)) as char;
            let v = format!("{stem}{c}");
            if self.used.insert(v.clone()) {
                return v;
            }
        }
    }

    /// Filler text with `planted` terms inserted at random positions.
    fn body(&mut self, planted: &[String], min_len: usize, max_len: usize) -> String {
        self.body_within(planted, min_len, max_len, (0.0, 1.0))
    }

    /// Like [`Gen::body`], with planted terms confined to a fraction range
    /// of the filler text.
    fn body_within(
        &mut self,
        planted: &[String],
        min_len: usize,
        max_len: usize,
        span: (f64, f64),
    ) -> String {
        let n = self.rng.random_range(min_len..=max_len);
        let mut words: Vec<String> = (0..n)
            .map(|_| FILLER.choose(&mut self.rng).unwrap().to_string())
            .collect();
        let lo = (span.0 * n as f64) as usize;
        let hi = (span.1 * n as f64) as usize;
        for p in planted {
            let at = self.rng.random_range(lo..=hi);
            words.insert(at, p.clone());
        }
        words.join(" ")
    }
}

#[derive(Clone)]
enum Signal {
    Exact([String; 2]),
    Synonym(usize),
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        used: HashSet::new(),
    };
    let (lo, hi) = (config.min_len, config.max_len);
    let stems: Vec<String> = (0..config.families).map(|_| g.word(5)).collect();
    let forms = |f: usize| -> Vec<String> {
        SUFFIXES
            .iter()
            .map(|s| format!("{}{s}", stems[f]))
            .collect()
    };

    let signals: Vec<Signal> = (0..config.queries)
        .map(|i| {
            let synonym = match config.kind {
                SynthKind::Synonym => true,
                SynthKind::Mixed => i % 2 == 1,
                _ => false,
            };
            if synonym {
                Signal::Synonym(i % config.families.max(1))
            } else {
                Signal::Exact([g.word(6), g.word(6)])
            }
        })
        .collect();

    // Bad pool: filler plus, when stems exist, forms of one or two stems.
    let mut pool: Vec<(String, Option<BTreeSet<usize>>)> = Vec::new();
    let has_stems = signals.iter().any(|s| matches!(s, Signal::Synonym(_)));
    for _ in 0..config.bad_pool {
        if has_stems {
            let k = g.rng.random_range(1..=2usize);
            let fams: BTreeSet<usize> = (0..k)
                .map(|_| g.rng.random_range(0..config.families))
                .collect();
            let planted: Vec<String> = fams
                .iter()
                .flat_map(|&f| {
                    let fs = forms(f);
                    (0..2)
                        .map(|_| fs.choose(&mut g.rng).unwrap().clone())
                        .collect::<Vec<_>>()
                })
                .collect();
            pool.push((g.body(&planted, lo, hi), Some(fams)));
        } else {
            pool.push((g.body(&[], lo, hi), None));
        }
    }

    let mut bodies: Vec<(String, String)> = Vec::new();
    let mut pool_ids = Vec::new();
    for (body, _) in &pool {
        pool_ids.push(bodies.len());
        bodies.push((String::new(), body.clone()));
    }
    let mut queries = Vec::new();
    let mut graded: Vec<(String, usize, Rating)> = Vec::new();
    for (i, sig) in signals.iter().enumerate() {
        let qid = format!("q{i:04}");
        let mut add = |bodies: &mut Vec<(String, String)>, body: String, r: Rating| {
            graded.push((qid.clone(), bodies.len(), r));
            bodies.push((String::new(), body));
        };
        let banned: Option<usize> = match sig {
            Signal::Exact([a, b]) => {
                queries.push((qid.clone(), format!("{a} {b}")));
                let pick = |g: &mut Gen| [a, b][g.rng.random_range(0..2)].clone();
                let e = [a.clone(), a.clone(), b.clone(), b.clone()];
                let body = g.body(&e, lo, hi);
                add(&mut bodies, body, Rating::Excellent);
                if config.kind == SynthKind::Confusable {
                    let one = [pick(&mut g)];
                    let body = g.body(&one, lo, hi);
                    add(&mut bodies, body, Rating::Good);
                    let late = [
                        a.clone(),
                        a.clone(),
                        a.clone(),
                        b.clone(),
                        b.clone(),
                        b.clone(),
                    ];
                    for _ in 0..4 {
                        let body = g.body_within(&late, lo, hi, (0.7, 1.0));
                        add(&mut bodies, body, Rating::Fair);
                    }
                } else {
                    let one = [pick(&mut g)];
                    let body = g.body(&one, lo, hi);
                    add(&mut bodies, body, Rating::Good);
                }
                if config.kind == SynthKind::Mixed {
                    for t in [a, b] {
                        let near = vec![g.near_miss(t); 2];
                        let body = g.body(&near, lo, hi);
                        add(&mut bodies, body, Rating::Bad);
                    }
                }
                None
            }
            Signal::Synonym(f) => {
                let fs = forms(*f);
                let qform = fs.choose(&mut g.rng).unwrap().clone();
                queries.push((qid.clone(), qform.clone()));
                let others: Vec<String> = fs.iter().filter(|x| **x != qform).cloned().collect();
                let pick = |g: &mut Gen, n: usize| -> Vec<String> {
                    (0..n)
                        .map(|_| others.choose(&mut g.rng).unwrap().clone())
                        .collect()
                };
                let e = pick(&mut g, 3);
                let body = g.body(&e, lo, hi);
                add(&mut bodies, body, Rating::Excellent);
                Some(*f)
            }
        };
        let eligible: Vec<usize> = pool_ids
            .iter()
            .zip(&pool)
            .filter(|(_, (_, fams))| match (banned, fams) {
                (Some(f), Some(fams)) => !fams.contains(&f),
                _ => true,
            })
            .map(|(&id, _)| id)
            .collect();
        let n = config.bad_per_query.min(eligible.len());
        for &d in eligible.choose_multiple(&mut g.rng, n) {
            graded.push((qid.clone(), d, Rating::Bad));
        }
    }

    // Ids carry no information about grade or generation order.
    let mut order: Vec<usize> = (0..bodies.len()).collect();
    order.shuffle(&mut g.rng);
    let mut ids = vec![String::new(); bodies.len()];
    for (rank, &i) in order.iter().enumerate() {
        ids[i] = format!("d{rank:05}");
    }
    let mut documents: Vec<RawDocument> = bodies
        .into_iter()
        .enumerate()
        .map(|(i, (_, body))| RawDocument {
            doc_id: ids[i].clone(),
            body,
        })
        .collect();
    documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut judgments: Vec<Judgment> = graded
        .into_iter()
        .map(|(q, d, rating)| Judgment {
            query_id: q,
            doc_id: ids[d].clone(),
            rating,
        })
        .collect();
    judgments.sort_by(|a, b| (&a.query_id, &a.doc_id).cmp(&(&b.query_id, &b.doc_id)));

    let mut qids: Vec<String> = queries.iter().map(|(q, _)| q.clone()).collect();
    qids.shuffle(&mut g.rng);
    let n_test = ((qids.len() as f64) * config.test_fraction).round() as usize;
    let test_queries: BTreeSet<String> = qids[..n_test].iter().cloned().collect();
    let train_queries: BTreeSet<String> = qids[n_test..].iter().cloned().collect();
    SynthCorpus {
        config: *config,
        documents,
        queries,
        judgments,
        train_queries,
        test_queries,
    }
}

impl SynthCorpus {
    pub fn documents(&self) -> Vec<Document> {
        self.documents
            .iter()
            .map(|d| Document::new(&d.doc_id, &d.body))
            .collect()
    }

    fn subset(&self, keep: &BTreeSet<String>) -> Result<Collection, CorpusError> {
        Collection::new(
            self.queries
                .iter()
                .filter(|(q, _)| keep.contains(q))
                .map(|(q, t)| Query::new(q, t)),
            self.documents(),
            self.judgments
                .iter()
                .filter(|j| keep.contains(&j.query_id))
                .cloned(),
        )
    }

    /// All documents with the training queries and their judgments.
    pub fn train_collection(&self) -> Result<Collection, CorpusError> {
        self.subset(&self.train_queries)
    }

    /// All documents with the held-out queries and their judgments.
    pub fn test_collection(&self) -> Result<Collection, CorpusError> {
        self.subset(&self.test_queries)
    }

    /// Judged documents per held-out query.
    pub fn test_candidates(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for j in &self.judgments {
            if self.test_queries.contains(&j.query_id) {
                out.entry(j.query_id.clone())
                    .or_default()
                    .push(j.doc_id.clone());
            }
        }
        out
    }

    /// Writes `documents.tsv`, `queries.tsv`, `qrels.tsv`, the per-split
    /// `train_*`/`test_*` query and qrels files, and `test_candidates.tsv`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        write_documents(&dir.join("documents.tsv"), &self.documents)?;
        write_queries(&dir.join("queries.tsv"), &self.queries)?;
        write_qrels(&dir.join("qrels.tsv"), &self.judgments)?;
        for (name, keep) in [("train", &self.train_queries), ("test", &self.test_queries)] {
            let qs: Vec<(String, String)> = self
                .queries
                .iter()
                .filter(|(q, _)| keep.contains(q))
                .cloned()
                .collect();
            write_queries(&dir.join(format!("{name}_queries.tsv")), &qs)?;
            let js: Vec<Judgment> = self
                .judgments
                .iter()
                .filter(|j| keep.contains(&j.query_id))
                .cloned()
                .collect();
            write_qrels(&dir.join(format!("{name}_qrels.tsv")), &js)?;
        }
        let mut cands = String::new();
        for (q, docs) in self.test_candidates() {
            for d in docs {
                cands.push_str(&format!("{q}\t{d}\n"));
            }
        }
        fs::write(dir.join("test_candidates.tsv"), cands)
    }
}
