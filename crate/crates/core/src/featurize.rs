//! Model inputs: the binary exact-match interaction matrix for the local
//! subnetwork, and character n-graph count matrices over a ranked vocabulary
//! for the distributed subnetwork.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::{Real, Tensor};
use crate::corpus::{Document, TermSequence};

#[derive(Debug, Error)]
pub enum FeaturizeError {
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
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
}

/// Every contiguous substring of `term` with length `1..=max_n`, with
/// multiplicity, shortest first. No boundary markers are added.
pub fn extract_ngraphs(term: &str, max_n: usize) -> Vec<&str> {
    let len = term.len();
    let mut out = Vec::new();
    for n in 1..=max_n.min(len) {
        for start in 0..=len - n {
            // Normalized terms are ASCII, so byte offsets are char offsets.
            if let Some(g) = term.get(start..start + n) {
                out.push(g);
            }
        }
    }
    out
}

/// Ranked table of the most frequent character n-graphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGraphVocabulary {
    entries: Vec<(String, u64)>,
    index: HashMap<String, usize>,
    max_n: usize,
}

impl NGraphVocabulary {
    /// Keeps the `size` most frequent n-graphs, frequency descending with
    /// ties broken lexicographically.
    pub fn from_counts(counts: HashMap<String, u64>, max_n: usize, size: usize) -> Self {
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(size);
        Self::from_entries(ranked, max_n)
    }

    fn from_entries(entries: Vec<(String, u64)>, max_n: usize) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (g, _))| (g.clone(), i))
            .collect();
        NGraphVocabulary {
            entries,
            index,
            max_n,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn id(&self, ngraph: &str) -> Option<usize> {
        self.index.get(ngraph).copied()
    }

    /// `(ngraph, corpus frequency)` in id order.
    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    /// Number of entries per n-graph length, indexed by `n - 1`.
    pub fn composition(&self) -> Vec<usize> {
        let mut by_len = vec![0; self.max_n];
        for (g, _) in &self.entries {
            by_len[g.len() - 1] += 1;
        }
        by_len
    }

    /// Writes `rank<TAB>ngraph<TAB>frequency` lines.
    pub fn write_tsv(&self, path: &Path) -> Result<(), FeaturizeError> {
        fs::write(path, self.to_tsv()).map_err(|source| FeaturizeError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (rank, (g, f)) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{rank}\t{g}\t{f}");
        }
        out
    }

    /// Reads a vocabulary written by [`write_tsv`](Self::write_tsv). `max_n`
    /// becomes the longest n-graph present unless given.
    pub fn read_tsv(path: &Path, max_n: Option<usize>) -> Result<Self, FeaturizeError> {
        let text = fs::read_to_string(path).map_err(|source| FeaturizeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, message: String| FeaturizeError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(
                    i + 1,
                    format!("expected 3 fields, found {}", fields.len()),
                ));
            }
            let rank: usize = fields[0]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad rank {:?}", fields[0])))?;
            if rank != entries.len() {
                return Err(bad(i + 1, format!("rank {rank} out of order")));
            }
            let freq: u64 = fields[2]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad frequency {:?}", fields[2])))?;
            if fields[1].is_empty() {
                return Err(bad(i + 1, "empty n-graph".into()));
            }
            entries.push((fields[1].to_string(), freq));
        }
        let longest = entries.iter().map(|(g, _)| g.len()).max().unwrap_or(1);
        Ok(Self::from_entries(
            entries,
            max_n.unwrap_or(longest).max(longest),
        ))
    }
}

/// Counts n-graphs over every term of every document body and keeps the top
/// `size`. Warns when the corpus has fewer distinct n-graphs than requested.
pub fn build_ngraph_vocabulary<'a>(
    documents: impl IntoIterator<Item = &'a Document>,
    max_n: usize,
    size: usize,
) -> Result<NGraphVocabulary, FeaturizeError> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut any = false;
    for doc in documents {
        any = true;
        for term in &doc.tokens {
            for g in extract_ngraphs(term, max_n) {
                match counts.get_mut(g) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(g.to_string(), 1);
                    }
                }
            }
        }
    }
    if !any {
        return Err(FeaturizeError::EmptyCorpus);
    }
    let distinct = counts.len();
    let vocab = NGraphVocabulary::from_counts(counts, max_n, size);
    if distinct < size {
        log::warn!(
            "corpus has only {distinct} distinct n-graphs, vocabulary truncated below {size}"
        );
    }
    log::info!(
        "n-graph vocabulary composition by length: {:?}",
        vocab.composition()
    );
    Ok(vocab)
}

/// Binary `doc_len x query_len` matrix, doc-major: entry `(i, j)` is set iff
/// document term `i` equals query term `j` and neither is padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    doc_len: usize,
    query_len: usize,
    values: Vec<u8>,
}

impl InteractionMatrix {
    pub fn doc_len(&self) -> usize {
        self.doc_len
    }

    pub fn query_len(&self) -> usize {
        self.query_len
    }

    pub fn get(&self, doc_pos: usize, query_pos: usize) -> u8 {
        self.values[doc_pos * self.query_len + query_pos]
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// As a `[doc_len, query_len]` tensor: one input channel per document
    /// position, sliding over query positions.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::from_vec(vec![self.doc_len, self.query_len], data)
            .expect("interaction matrix shape is consistent")
    }

    /// Sparse triplet dump: a `shape n_d n_q` header then `i<TAB>j<TAB>v`
    /// for each nonzero entry.
    pub fn to_triplets(&self) -> String {
        let mut out = format!("shape {} {}\n", self.doc_len, self.query_len);
        for i in 0..self.doc_len {
            for j in 0..self.query_len {
                let v = self.get(i, j);
                if v != 0 {
                    let _ = writeln!(out, "{i}\t{j}\t{v}");
                }
            }
        }
        out
    }
}

pub fn interaction_matrix(query: &TermSequence, doc: &TermSequence) -> InteractionMatrix {
    let (nq, nd) = (query.target_len(), doc.target_len());
    let mut values = vec![0u8; nd * nq];
    // Index query positions by term so each doc term is one lookup.
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, t) in query.real_terms().iter().enumerate() {
        positions.entry(t.as_str()).or_default().push(j);
    }
    for (i, t) in doc.real_terms().iter().enumerate() {
        if let Some(js) = positions.get(t.as_str()) {
            for &j in js {
                values[i * nq + j] = 1;
            }
        }
    }
    InteractionMatrix {
        doc_len: nd,
        query_len: nq,
        values,
    }
}

/// `K x seq_len` n-graph counts, stored as sparse columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGraphMatrix {
    vocab_size: usize,
    columns: Vec<Vec<(u32, u32)>>,
}

impl NGraphMatrix {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seq_len(&self) -> usize {
        self.columns.len()
    }

    /// `(vocabulary id, count)` pairs of column `j`, ascending by id.
    pub fn column(&self, j: usize) -> &[(u32, u32)] {
        &self.columns[j]
    }

    pub fn get(&self, id: usize, j: usize) -> u32 {
        self.columns[j]
            .binary_search_by_key(&(id as u32), |&(i, _)| i)
            .map(|k| self.columns[j][k].1)
            .unwrap_or(0)
    }

    pub fn column_sum(&self, j: usize) -> u64 {
        self.columns[j].iter().map(|&(_, c)| c as u64).sum()
    }

    /// Dense `[K, seq_len]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let len = self.columns.len();
        let mut data = vec![T::zero(); self.vocab_size * len];
        for (j, col) in self.columns.iter().enumerate() {
            for &(id, c) in col {
                data[id as usize * len + j] = T::from_f64(c as f64);
            }
        }
        Tensor::from_vec(vec![self.vocab_size, len], data).expect("n-graph matrix shape")
    }
}

/// Column `j` holds the in-vocabulary n-graph counts of term `j`; padding
/// and fully out-of-vocabulary terms give empty columns.
pub fn ngraph_matrix(seq: &TermSequence, vocab: &NGraphVocabulary) -> NGraphMatrix {
    let columns = seq
        .terms()
        .iter()
        .map(|term| {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for g in extract_ngraphs(term, vocab.max_n()) {
                if let Some(id) = vocab.id(g) {
                    *counts.entry(id as u32).or_default() += 1;
                }
            }
            counts.into_iter().collect()
        })
        .collect();
    NGraphMatrix {
        vocab_size: vocab.len(),
        columns,
    }
}
