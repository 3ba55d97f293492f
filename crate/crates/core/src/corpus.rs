//! Queries, documents and graded judgments: loading, text normalization and
//! assembly of training instances.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// The reserved padding token. `normalize_text` never emits an empty token, so
/// the empty string cannot collide with a real term.
pub const PAD: &str = "";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("judgments reference unknown documents: {}", .0.join(", "))]
    DanglingDocuments(Vec<String>),
    #[error("judgments reference unknown queries: {}", .0.join(", "))]
    DanglingQueries(Vec<String>),
    #[error("numneg must be at least 1")]
    ZeroNegatives,
    #[error("document store has {available} documents, cannot draw {needed} random negatives")]
    NotEnoughDocuments { available: usize, needed: usize },
}

/// Lowercases, replaces every character outside `[a-z0-9]` with a separator
/// and splits. Never returns empty tokens.
pub fn normalize_text(raw: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in raw.chars().flat_map(char::to_lowercase) {
        if ch.is_ascii_lowercase() || ch.is_ascii_digit() {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// A fixed-length token sequence, truncated or right-padded with [`PAD`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TermSequence {
    terms: Vec<String>,
    pad_count: usize,
}

impl TermSequence {
    /// Keeps the first `target_len` tokens, padding on the right when short.
    ///
    /// # Panics
    ///
    /// Panics if `target_len` is zero.
    pub fn new(tokens: &[String], target_len: usize) -> Self {
        assert!(target_len > 0, "target length must be positive");
        let kept = tokens.len().min(target_len);
        let mut terms = Vec::with_capacity(target_len);
        terms.extend(tokens[..kept].iter().cloned());
        let pad_count = target_len - kept;
        terms.resize(target_len, PAD.to_string());
        TermSequence { terms, pad_count }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn target_len(&self) -> usize {
        self.terms.len()
    }

    pub fn pad_count(&self) -> usize {
        self.pad_count
    }

    /// Real (non-pad) terms.
    pub fn real_terms(&self) -> &[String] {
        &self.terms[..self.terms.len() - self.pad_count]
    }

    pub fn is_pad(&self, position: usize) -> bool {
        self.terms[position] == PAD
    }

    /// Copy with the term at `position` replaced by the pad sentinel. The
    /// result may have a pad before a real token, so it is only meant for
    /// ablation scoring.
    pub fn with_position_blanked(&self, position: usize) -> TermSequence {
        let mut out = self.clone();
        out.terms[position] = PAD.to_string();
        out
    }
}

/// Shorthand for `TermSequence::new(tokens, target_len)`.
pub fn to_term_sequence(tokens: &[String], target_len: usize) -> TermSequence {
    TermSequence::new(tokens, target_len)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub doc_id: String,
    pub body: String,
}

/// A document with its normalized token stream cached.
#[derive(Debug, Clone)]
pub struct Document {
    pub doc_id: String,
    pub body: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let tokens = normalize_text(&body);
        Document {
            doc_id: doc_id.into(),
            body,
            tokens,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = normalize_text(&text);
        Query {
            query_id: query_id.into(),
            text,
            tokens,
        }
    }
}

/// Five-point relevance grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rating {
    Bad = 0,
    Fair = 1,
    Good = 2,
    Excellent = 3,
    Perfect = 4,
}

impl Rating {
    pub fn from_level(level: u8) -> Option<Rating> {
        match level {
            0 => Some(Rating::Bad),
            1 => Some(Rating::Fair),
            2 => Some(Rating::Good),
            3 => Some(Rating::Excellent),
            4 => Some(Rating::Perfect),
            _ => None,
        }
    }

    pub fn level(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.level())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub query_id: String,
    pub doc_id: String,
    pub rating: Rating,
}

/// Graded judgments indexed by query.
#[derive(Debug, Clone, Default)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, Rating>>,
}

impl Qrels {
    pub fn from_judgments<'a>(judgments: impl IntoIterator<Item = &'a Judgment>) -> Self {
        let mut qrels = Qrels::default();
        for j in judgments {
            qrels.insert(j.clone());
        }
        qrels
    }

    /// Inserts a judgment, returning the previous rating if the pair was
    /// already judged.
    pub fn insert(&mut self, judgment: Judgment) -> Option<Rating> {
        self.by_query
            .entry(judgment.query_id)
            .or_default()
            .insert(judgment.doc_id, judgment.rating)
    }

    pub fn rating(&self, query_id: &str, doc_id: &str) -> Option<Rating> {
        self.by_query.get(query_id)?.get(doc_id).copied()
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, Rating>> {
        self.by_query.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    pub fn judgments(&self) -> impl Iterator<Item = Judgment> + '_ {
        self.by_query.iter().flat_map(|(q, docs)| {
            docs.iter().map(move |(d, r)| Judgment {
                query_id: q.clone(),
                doc_id: d.clone(),
                rating: *r,
            })
        })
    }
}

/// An immutable, fully materialized collection.
#[derive(Debug, Clone, Default)]
pub struct Collection {
    pub queries: BTreeMap<String, Query>,
    pub documents: BTreeMap<String, Document>,
    pub qrels: Qrels,
}

impl Collection {
    /// Builds a collection in memory and checks referential integrity.
    pub fn new(
        queries: impl IntoIterator<Item = Query>,
        documents: impl IntoIterator<Item = Document>,
        judgments: impl IntoIterator<Item = Judgment>,
    ) -> Result<Self, CorpusError> {
        let collection = Collection {
            queries: queries
                .into_iter()
                .map(|q| (q.query_id.clone(), q))
                .collect(),
            documents: documents
                .into_iter()
                .map(|d| (d.doc_id.clone(), d))
                .collect(),
            qrels: Qrels::from_judgments(&judgments.into_iter().collect::<Vec<_>>()),
        };
        collection.check_references()?;
        Ok(collection)
    }

    fn check_references(&self) -> Result<(), CorpusError> {
        let mut missing_docs = BTreeSet::new();
        let mut missing_queries = BTreeSet::new();
        for j in self.qrels.judgments() {
            if !self.documents.contains_key(&j.doc_id) {
                missing_docs.insert(j.doc_id);
            }
            if !self.queries.contains_key(&j.query_id) {
                missing_queries.insert(j.query_id);
            }
        }
        if !missing_docs.is_empty() {
            return Err(CorpusError::DanglingDocuments(
                missing_docs.into_iter().collect(),
            ));
        }
        if !missing_queries.is_empty() {
            return Err(CorpusError::DanglingQueries(
                missing_queries.into_iter().collect(),
            ));
        }
        Ok(())
    }
}

/// Locations of the three collection files.
#[derive(Debug, Clone)]
pub struct CollectionPaths {
    pub queries: PathBuf,
    pub documents: PathBuf,
    pub qrels: PathBuf,
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Iterates `(line_number, fields)` over non-empty lines of a TSV file.
fn tsv_lines<'a>(text: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            (
                i + 1,
                l.strip_suffix('\r').unwrap_or(l).split('\t').collect(),
            )
        })
}

fn parse_id_text(path: &Path, text: &str) -> Result<Vec<(String, String)>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, fields) in tsv_lines(text) {
        if fields.len() != 2 {
            return Err(malformed(
                path,
                line,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(malformed(path, line, "empty identifier"));
        }
        if !seen.insert(id.to_string()) {
            return Err(malformed(path, line, format!("duplicate identifier {id}")));
        }
        out.push((id.to_string(), fields[1].to_string()));
    }
    Ok(out)
}

/// Reads `doc_id<TAB>body` lines.
pub fn read_documents(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let text = read_file(path)?;
    Ok(parse_id_text(path, &text)?
        .into_iter()
        .map(|(id, body)| Document::new(id, body))
        .collect())
}

/// Reads `query_id<TAB>text` lines.
pub fn read_queries(path: &Path) -> Result<Vec<Query>, CorpusError> {
    let text = read_file(path)?;
    Ok(parse_id_text(path, &text)?
        .into_iter()
        .map(|(id, t)| Query::new(id, t))
        .collect())
}

/// Reads `query_id<TAB>doc_id<TAB>rating` lines.
pub fn read_qrels(path: &Path) -> Result<Vec<Judgment>, CorpusError> {
    let text = read_file(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, fields) in tsv_lines(&text) {
        if fields.len() != 3 {
            return Err(malformed(
                path,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (q, d) = (fields[0].trim(), fields[1].trim());
        if q.is_empty() || d.is_empty() {
            return Err(malformed(path, line, "empty identifier"));
        }
        let rating = fields[2]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(Rating::from_level)
            .ok_or_else(|| malformed(path, line, format!("rating {:?} not in 0..4", fields[2])))?;
        if !seen.insert((q.to_string(), d.to_string())) {
            return Err(malformed(path, line, format!("duplicate judgment {q} {d}")));
        }
        out.push(Judgment {
            query_id: q.to_string(),
            doc_id: d.to_string(),
            rating,
        });
    }
    Ok(out)
}

/// Loads queries, documents and judgments and checks that every judgment
/// refers to a known query and document.
pub fn load_collection(paths: &CollectionPaths) -> Result<Collection, CorpusError> {
    let queries = read_queries(&paths.queries)?;
    let documents = read_documents(&paths.documents)?;
    let judgments = read_qrels(&paths.qrels)?;
    Collection::new(queries, documents, judgments)
}

pub fn write_documents(path: &Path, docs: &[RawDocument]) -> std::io::Result<()> {
    let mut out = String::new();
    for d in docs {
        out.push_str(&format!("{}\t{}\n", d.doc_id, d.body));
    }
    fs::write(path, out)
}

pub fn write_queries(path: &Path, queries: &[(String, String)]) -> std::io::Result<()> {
    let mut out = String::new();
    for (id, text) in queries {
        out.push_str(&format!("{id}\t{text}\n"));
    }
    fs::write(path, out)
}

pub fn write_qrels(path: &Path, judgments: &[Judgment]) -> std::io::Result<()> {
    let mut out = String::new();
    for j in judgments {
        out.push_str(&format!("{}\t{}\t{}\n", j.query_id, j.doc_id, j.rating));
    }
    fs::write(path, out)
}

/// Where training negatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NegativeMode {
    /// Human-judged lower-grade documents for the same query.
    Judged,
    /// Uniform samples from the whole document store.
    Random,
}

impl std::str::FromStr for NegativeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "judged" => Ok(NegativeMode::Judged),
            "random" => Ok(NegativeMode::Random),
            other => Err(format!(
                "unknown negative mode {other:?} (expected judged|random)"
            )),
        }
    }
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeMode::Judged => "judged",
            NegativeMode::Random => "random",
        })
    }
}

/// A candidate document inside a training instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub doc_id: String,
    pub terms: TermSequence,
    /// Judged grade for this query; `None` for unjudged random samples.
    pub rating: Option<Rating>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub query_id: String,
    pub query: TermSequence,
    pub positive: Candidate,
    pub negatives: Vec<Candidate>,
    pub provenance: NegativeMode,
}

impl TrainingInstance {
    /// `query_id:positive_doc_id`, used in diagnostics.
    pub fn id(&self) -> String {
        format!("{}:{}", self.query_id, self.positive.doc_id)
    }

    /// Positive first, then negatives.
    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        std::iter::once(&self.positive).chain(self.negatives.iter())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceConfig {
    pub mode: NegativeMode,
    pub numneg: usize,
    pub seed: u64,
    pub query_len: usize,
    pub doc_len: usize,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            mode: NegativeMode::Judged,
            numneg: 4,
            seed: 0,
            query_len: 10,
            doc_len: 1000,
        }
    }
}

/// What happened while assembling instances.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstanceReport {
    pub queries_seen: usize,
    /// Queries with judgments but neither an excellent nor a good document.
    pub skipped_no_positive: Vec<String>,
    /// Patterns whose positive existed but too few negatives of the grade.
    pub skipped_patterns: usize,
    pub instances: usize,
}

/// The three (positive grade, negative grade) training patterns.
const PATTERNS: [(Rating, Rating); 3] = [
    (Rating::Excellent, Rating::Fair),
    (Rating::Excellent, Rating::Bad),
    (Rating::Good, Rating::Bad),
];

/// Builds training instances from graded judgments.
///
/// Per query at most one instance of each pattern is emitted: an excellent
/// document against `numneg` fair ones, an excellent against bad ones, and a
/// good against bad ones. Perfect-rated documents are ignored. When a grade
/// has several documents, the positive is the smallest doc id and negatives
/// are a seeded sample. In random mode the same instances are emitted but the
/// negatives are drawn uniformly from the whole document store.
pub fn build_training_instances(
    collection: &Collection,
    config: &InstanceConfig,
) -> Result<(Vec<TrainingInstance>, InstanceReport), CorpusError> {
    if config.numneg == 0 {
        return Err(CorpusError::ZeroNegatives);
    }
    let all_docs: Vec<&String> = collection.documents.keys().collect();
    if config.mode == NegativeMode::Random && all_docs.len() <= config.numneg {
        return Err(CorpusError::NotEnoughDocuments {
            available: all_docs.len(),
            needed: config.numneg + 1,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = Vec::new();
    let mut report = InstanceReport::default();

    let candidate = |doc_id: &str, rating: Option<Rating>| -> Candidate {
        let doc = &collection.documents[doc_id];
        Candidate {
            doc_id: doc_id.to_string(),
            terms: TermSequence::new(&doc.tokens, config.doc_len),
            rating,
        }
    };

    for (query_id, judged) in &collection.qrels.by_query {
        report.queries_seen += 1;
        let mut by_grade: BTreeMap<Rating, Vec<&String>> = BTreeMap::new();
        for (doc_id, rating) in judged {
            if *rating != Rating::Perfect {
                by_grade.entry(*rating).or_default().push(doc_id);
            }
        }
        let grade = |r: Rating| by_grade.get(&r).map(Vec::as_slice).unwrap_or(&[]);
        if grade(Rating::Excellent).is_empty() && grade(Rating::Good).is_empty() {
            report.skipped_no_positive.push(query_id.clone());
            continue;
        }
        let query = TermSequence::new(&collection.queries[query_id].tokens, config.query_len);

        for (pos_grade, neg_grade) in PATTERNS {
            // BTreeMap iteration keeps each grade's ids sorted.
            let Some(positive) = grade(pos_grade).first() else {
                continue;
            };
            let pool = grade(neg_grade);
            if pool.len() < config.numneg {
                report.skipped_patterns += 1;
                continue;
            }
            let negatives = match config.mode {
                NegativeMode::Judged => {
                    let picks = index::sample(&mut rng, pool.len(), config.numneg);
                    picks
                        .into_iter()
                        .map(|i| candidate(pool[i], Some(neg_grade)))
                        .collect()
                }
                NegativeMode::Random => {
                    let pos_index = all_docs.binary_search(positive).ok();
                    let draw_from = all_docs.len() - usize::from(pos_index.is_some());
                    let picks = index::sample(&mut rng, draw_from, config.numneg);
                    picks
                        .into_iter()
                        .map(|i| {
                            let i = match pos_index {
                                Some(p) if i >= p => i + 1,
                                _ => i,
                            };
                            let id = all_docs[i];
                            candidate(id, collection.qrels.rating(query_id, id))
                        })
                        .collect()
                }
            };
            instances.push(TrainingInstance {
                query_id: query_id.clone(),
                query: query.clone(),
                positive: candidate(positive, Some(pos_grade)),
                negatives,
                provenance: config.mode,
            });
        }
    }
    report.instances = instances.len();
    if !report.skipped_no_positive.is_empty() {
        log::warn!(
            "{} queries have judgments but no excellent or good document",
            report.skipped_no_positive.len()
        );
    }
    Ok((instances, report))
}
