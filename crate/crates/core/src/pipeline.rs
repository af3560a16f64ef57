//! End-to-end re-ranking over a batch of queries.
//!
//! Per query: build the prompt and its calibration variant, acquire attention
//! for both from a backend, score, and rank. Queries run on a rayon pool and
//! results come back in input order.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{score_documents, ScoreError, ScoreMode};
use crate::backend::{AttentionBackend, BackendError, DumpBackend, PlantConfig, PlantedBackend, ToyBackend};
use crate::data::{load_candidates, load_corpus, load_queries, resolve_candidates, DataError};
use crate::layout::{
    build_calibration_layout, build_prompt_with, Document, LayoutError, ModelProfile, OrderMode, PromptLayout,
    PromptOptions, Query, QueryStyle,
};
use crate::tokenizer::{fnv1a, WhitespaceTokenizer};
use crate::toy::{ToyConfig, ToyModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("query `{query}`: {source}")]
    Layout { query: String, source: LayoutError },
    #[error("query `{query}`: {source}")]
    Score { query: String, source: ScoreError },
    #[error("query `{query}`: {source}")]
    Backend { query: String, source: BackendError },
    #[error(transparent)]
    BackendSetup(BackendError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("query `{0}` has candidates but no query text")]
    UnknownQuery(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Worker cap from the `ICR_THREADS` environment variable, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("ICR_THREADS")
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n: &usize| n > 0)
}

/// Per-query presentation order. A random order is reseeded per query from
/// the base seed and the query id.
pub fn order_for_query(order: OrderMode, query_id: &str) -> OrderMode {
    match order {
        OrderMode::Random(seed) => OrderMode::Random(seed ^ fnv1a(query_id.as_bytes())),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub doc_id: String,
    pub rank: usize,
    pub retriever_rank: usize,
    pub score: f64,
    pub kept_tokens: usize,
    pub dropped_tokens: usize,
    pub tokens: Vec<String>,
    pub token_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub qid: String,
    pub query: String,
    /// Documents in final ranked order.
    pub documents: Vec<ScoredDocument>,
    pub context_tokens: usize,
    pub calibration_tokens: Option<usize>,
    pub reused_prefix_tokens: usize,
    pub forward_passes: usize,
}

/// Scoring setup shared by every query in a batch.
pub struct Reranker<'a> {
    pub profile: ModelProfile,
    pub backend: &'a dyn AttentionBackend,
    pub order: OrderMode,
    pub mode: ScoreMode,
    pub options: PromptOptions,
}

impl<'a> Reranker<'a> {
    pub fn new(profile: ModelProfile, backend: &'a dyn AttentionBackend) -> Self {
        Self {
            profile,
            backend,
            order: OrderMode::Reversed,
            mode: ScoreMode::Full,
            options: PromptOptions::default(),
        }
    }

    pub fn layouts(&self, query: &Query, docs: &[Document]) -> Result<(PromptLayout, PromptLayout), PipelineError> {
        let err = |source| PipelineError::Layout {
            query: query.id.clone(),
            source,
        };
        let order = order_for_query(self.order, &query.id);
        let layout = build_prompt_with(docs, query, &self.profile, order, &self.options).map_err(err)?;
        let cal = build_calibration_layout(&layout, &self.profile).map_err(err)?;
        Ok((layout, cal))
    }

    pub fn rerank(&self, query: &Query, docs: &[Document]) -> Result<QueryResult, PipelineError> {
        let (layout, cal) = self.layouts(query, docs)?;
        let use_cal = self.mode.uses_calibration();
        let acquired = self
            .backend
            .acquire(&layout, use_cal.then_some(&cal))
            .map_err(|source| PipelineError::Backend {
                query: query.id.clone(),
                source,
            })?;
        let calibration = acquired.calibration.as_ref().map(|slice| (&cal, slice));
        let out = score_documents(&layout, &acquired.query, calibration, self.mode).map_err(|source| {
            PipelineError::Score {
                query: query.id.clone(),
                source,
            }
        })?;

        let by_id: HashMap<&str, _> = out.doc_scores.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let documents = out
            .ranking
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let ds = by_id[e.doc_id.as_str()];
                let tok = out
                    .token_scores
                    .get(&e.doc_id)
                    .expect("every ranked doc has token scores");
                ScoredDocument {
                    doc_id: e.doc_id.clone(),
                    rank: i + 1,
                    retriever_rank: e.retriever_rank,
                    score: e.score,
                    kept_tokens: ds.kept_token_count,
                    dropped_tokens: ds.dropped_token_count,
                    tokens: tok.span.clone().map(|t| layout.token_text(t).to_string()).collect(),
                    token_scores: tok.values.clone(),
                }
            })
            .collect();

        Ok(QueryResult {
            qid: query.id.clone(),
            query: query.text.clone(),
            documents,
            context_tokens: layout.total_len(),
            calibration_tokens: use_cal.then(|| cal.total_len()),
            reused_prefix_tokens: acquired.reused_prefix_tokens,
            forward_passes: acquired.passes,
        })
    }

    /// Re-rank every `(query, candidates)` pair on up to `threads` workers
    /// (all cores when `None`). Output order matches input order.
    pub fn rerank_batch(
        &self,
        batch: &[(Query, Vec<Document>)],
        threads: Option<usize>,
    ) -> Result<Vec<QueryResult>, PipelineError> {
        use rayon::prelude::*;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n.max(1));
        }
        let pool = builder.build().map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
        pool.install(|| batch.par_iter().map(|(q, d)| self.rerank(q, d)).collect())
    }
}

/// Write TREC run lines in input order.
pub fn write_run<W: Write>(results: &[QueryResult], tag: &str, mut w: W) -> std::io::Result<()> {
    for r in results {
        for d in &r.documents {
            writeln!(w, "{} Q0 {} {} {:.10} {tag}", r.qid, d.doc_id, d.rank, d.score)?;
        }
    }
    Ok(())
}

/// Token-level score file consumed by the heatmap renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreFile {
    pub mode: ScoreMode,
    pub backend: String,
    pub queries: Vec<QueryResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Toy(ToyConfig),
    Planted { plant: PathBuf },
    Dump { dir: PathBuf },
}

/// Everything needed to re-rank a batch from files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub candidates: PathBuf,
    pub backend: BackendSpec,
    pub order: OrderMode,
    pub style: Option<QueryStyle>,
    pub mode: ScoreMode,
    pub options: PromptOptions,
    pub prefix_marker: String,
    pub suffix_marker: String,
    pub threads: Option<usize>,
    pub vocab_size: u32,
    /// Re-rank only the retriever's top `k` candidates.
    pub top_k: Option<usize>,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, queries: impl Into<PathBuf>, candidates: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            queries: queries.into(),
            candidates: candidates.into(),
            backend: BackendSpec::Toy(ToyConfig::default()),
            order: OrderMode::Reversed,
            style: None,
            mode: ScoreMode::Full,
            options: PromptOptions::default(),
            prefix_marker: String::new(),
            suffix_marker: String::new(),
            threads: None,
            vocab_size: ToyConfig::default().vocab_size,
            top_k: None,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.into(),
        source,
    })
}

/// Instantiate the configured backend and the matching model profile.
pub fn open_backend(config: &RunConfig) -> Result<(Box<dyn AttentionBackend>, ModelProfile), PipelineError> {
    let (backend, layers, heads, vocab): (Box<dyn AttentionBackend>, _, _, _) = match &config.backend {
        BackendSpec::Toy(toy) => {
            let model = ToyModel::new(*toy).map_err(|e| PipelineError::BackendSetup(e.into()))?;
            (Box::new(ToyBackend::new(model)), toy.layers, toy.heads, toy.vocab_size)
        }
        BackendSpec::Planted { plant } => {
            let cfg: PlantConfig = read_json(plant)?;
            let (l, h) = (cfg.layers.max(1), cfg.heads.max(1));
            (Box::new(PlantedBackend::new(cfg)), l, h, config.vocab_size)
        }
        BackendSpec::Dump { dir } => {
            if !dir.is_dir() {
                return Err(PipelineError::BackendSetup(BackendError::Unavailable(format!(
                    "{} is not a directory",
                    dir.display()
                ))));
            }
            (Box::new(DumpBackend::new(dir.clone())), 1, 1, config.vocab_size)
        }
    };
    let tokenizer = Arc::new(WhitespaceTokenizer::new(vocab));
    let profile = ModelProfile::new(backend.name(), layers, heads, tokenizer)
        .map_err(|source| PipelineError::Layout {
            query: String::new(),
            source,
        })?
        .with_markers(config.prefix_marker.clone(), config.suffix_marker.clone());
    Ok((backend, profile))
}

/// Load queries and their candidate documents, in candidate-file order.
pub fn load_batch(config: &RunConfig) -> Result<Vec<(Query, Vec<Document>)>, PipelineError> {
    let corpus = load_corpus(&config.corpus)?;
    let queries: HashMap<String, Query> = load_queries(&config.queries)?
        .into_iter()
        .map(|q| (q.id.clone(), q))
        .collect();
    load_candidates(&config.candidates)?
        .into_iter()
        .map(|mut c| {
            if let Some(k) = config.top_k {
                c.docids.truncate(k);
            }
            let mut q = queries
                .get(&c.qid)
                .cloned()
                .ok_or_else(|| PipelineError::UnknownQuery(c.qid.clone()))?;
            if let Some(style) = config.style {
                q.style = style;
            }
            if c.docids.is_empty() {
                return Err(DataError::NoCandidates(c.qid.clone()).into());
            }
            Ok((q, resolve_candidates(&c, &corpus)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RerankOutput {
    pub backend: String,
    pub results: Vec<QueryResult>,
}

pub fn run_rerank(config: &RunConfig) -> Result<RerankOutput, PipelineError> {
    let (backend, profile) = open_backend(config)?;
    let batch = load_batch(config)?;
    let reranker = Reranker {
        profile,
        backend: backend.as_ref(),
        order: config.order,
        mode: config.mode,
        options: config.options.clone(),
    };
    let results = reranker.rerank_batch(&batch, config.threads)?;
    Ok(RerankOutput {
        backend: backend.name(),
        results,
    })
}

/// Path of the token-score file written next to a run file.
pub fn token_scores_path(run_path: &Path) -> PathBuf {
    let mut name = run_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tokens.json");
    run_path.with_file_name(name)
}

/// Write the run file and its token-score JSON; returns the JSON path.
pub fn write_rerank_output(output: &RerankOutput, mode: ScoreMode, run_path: &Path) -> Result<PathBuf, PipelineError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    let mut buf = Vec::new();
    write_run(&output.results, "icr", &mut buf).map_err(io_err(run_path))?;
    std::fs::write(run_path, buf).map_err(io_err(run_path))?;

    let tokens_path = token_scores_path(run_path);
    let file = TokenScoreFile {
        mode,
        backend: output.backend.clone(),
        queries: output.results.clone(),
    };
    let json = serde_json::to_vec_pretty(&file).map_err(|source| PipelineError::Json {
        path: tokens_path.clone(),
        source,
    })?;
    std::fs::write(&tokens_path, json).map_err(io_err(&tokens_path))?;
    Ok(tokens_path)
}

/// Write `{qid}.q.layout.json` and `{qid}.cal.layout.json` per query.
pub fn export_layouts(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let (backend, profile) = open_backend(config)?;
    let batch = load_batch(config)?;
    let reranker = Reranker {
        profile,
        backend: backend.as_ref(),
        order: config.order,
        mode: config.mode,
        options: config.options.clone(),
    };
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.into(),
        source,
    })?;
    let model = reranker.profile.name.clone();
    let mut written = Vec::new();
    for (q, docs) in &batch {
        let (layout, cal) = reranker.layouts(q, docs)?;
        for l in [&layout, &cal] {
            let path = out_dir.join(format!("{}.{}.layout.json", l.query_id, l.pass.tag()));
            let json = serde_json::to_vec_pretty(&l.to_export(&model)).map_err(|source| PipelineError::Json {
                path: path.clone(),
                source,
            })?;
            std::fs::write(&path, json).map_err(|source| PipelineError::Io {
                path: path.clone(),
                source,
            })?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_order_depends_on_query() {
        assert_ne!(
            order_for_query(OrderMode::Random(1), "a"),
            order_for_query(OrderMode::Random(1), "b")
        );
        assert_eq!(order_for_query(OrderMode::Reversed, "a"), OrderMode::Reversed);
    }

    #[test]
    fn tokens_path() {
        assert_eq!(
            token_scores_path(Path::new("/x/run.trec")),
            Path::new("/x/run.trec.tokens.json")
        );
    }
}
