//! JSONL inputs: corpus, queries and per-query candidate lists.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{Document, Query, QueryStyle};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("query `{query}` lists unknown document `{doc}`")]
    UnknownDocument { query: String, doc: String },
    #[error("no candidates for query `{0}`")]
    NoCandidates(String),
}

#[derive(Debug, Deserialize)]
struct CorpusRow {
    #[serde(rename = "_id")]
    id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
}

#[derive(Debug, Deserialize)]
struct QueryRow {
    #[serde(rename = "_id")]
    id: String,
    text: String,
    #[serde(default)]
    style: QueryStyle,
}

/// Retriever output for one query, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidates {
    pub qid: String,
    pub docids: Vec<String>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.into(),
        source,
    })?;
    parse_jsonl(&text, path)
}

fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DataError::Parse {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_corpus(path: &Path) -> Result<HashMap<String, Document>, DataError> {
    Ok(read_jsonl::<CorpusRow>(path)?
        .into_iter()
        .map(|r| {
            (
                r.id.clone(),
                Document {
                    id: r.id,
                    title: r.title.filter(|t| !t.is_empty()),
                    text: r.text,
                },
            )
        })
        .collect())
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>, DataError> {
    Ok(read_jsonl::<QueryRow>(path)?
        .into_iter()
        .map(|r| Query {
            id: r.id,
            text: r.text,
            style: r.style,
        })
        .collect())
}

pub fn load_candidates(path: &Path) -> Result<Vec<Candidates>, DataError> {
    read_jsonl(path)
}

/// Resolve a candidate list against the corpus, keeping retriever order.
pub fn resolve_candidates(
    candidates: &Candidates,
    corpus: &HashMap<String, Document>,
) -> Result<Vec<Document>, DataError> {
    candidates
        .docids
        .iter()
        .map(|d| {
            corpus.get(d).cloned().ok_or_else(|| DataError::UnknownDocument {
                query: candidates.qid.clone(),
                doc: d.clone(),
            })
        })
        .collect()
}
