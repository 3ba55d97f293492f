//! Run files: one ranked list of scored documents per query.
//!
//! Each line is `query_id<TAB>doc_id<TAB>rank<TAB>score<TAB>run_tag`, ranks
//! starting at 1.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// A ranker's output over a set of queries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    pub tag: String,
    /// Per query, documents in rank order with their scores.
    pub rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            rankings: BTreeMap::new(),
        }
    }

    /// Sorts `scored` by descending score, ties by ascending doc_id, and
    /// stores it as the ranking for `query_id`.
    pub fn insert_scored(&mut self, query_id: impl Into<String>, mut scored: Vec<(String, f64)>) {
        sort_ranking(&mut scored);
        self.rankings.insert(query_id.into(), scored);
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.rankings {
            for (rank, (d, s)) in docs.iter().enumerate() {
                out.push_str(&format!("{q}\t{d}\t{}\t{s}\t{}\n", rank + 1, self.tag));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), RunError> {
        fs::write(path, self.to_tsv()).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Run, RunError> {
        let text = fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Run::parse(&text, path)
    }

    /// Parses run text; `path` is used only in error messages. Rows are
    /// re-ordered by their rank column.
    pub fn parse(text: &str, path: &Path) -> Result<Run, RunError> {
        let bad = |line: usize, message: String| RunError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut tag: Option<String> = None;
        let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(
                    n,
                    format!("expected 5 tab-separated fields, found {}", f.len()),
                ));
            }
            let rank: usize = f[2]
                .parse()
                .ok()
                .filter(|&r| r >= 1)
                .ok_or_else(|| bad(n, format!("invalid rank {:?}", f[2])))?;
            let score: f64 = f[3]
                .parse()
                .map_err(|_| bad(n, format!("invalid score {:?}", f[3])))?;
            match &tag {
                None => tag = Some(f[4].to_string()),
                Some(t) if t != f[4] => {
                    return Err(bad(n, format!("run tag {:?} differs from {t:?}", f[4])))
                }
                _ => {}
            }
            rows.entry(f[0].to_string())
                .or_default()
                .push((rank, f[1].to_string(), score));
        }
        let mut run = Run::new(tag.unwrap_or_default());
        for (q, mut docs) in rows {
            docs.sort_by_key(|r| r.0);
            run.rankings
                .insert(q, docs.into_iter().map(|(_, d, s)| (d, s)).collect());
        }
        Ok(run)
    }
}

/// Descending score, ties broken by ascending doc_id.
pub fn sort_ranking(scored: &mut [(String, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}
