//! Wall-clock scaling of the toy re-ranking pipeline with the number of
//! candidate documents.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::ScoreMode;
use crate::backend::{AttentionBackend, ToyBackend};
use crate::complexity::{count_forward_passes, ComplexityError, CostParams, Method};
use crate::layout::{Document, ModelProfile, Query, QueryStyle};
use crate::pipeline::{PipelineError, Reranker};
use crate::tokenizer::WhitespaceTokenizer;
use crate::toy::{ToyConfig, ToyModel};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid bench parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
}

pub const DEFAULT_KS: [usize; 5] = [20, 40, 60, 80, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub toy: ToyConfig,
    pub ks: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Words per synthetic document.
    pub doc_words: usize,
    /// Run trials on the rayon pool instead of one at a time.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            toy: ToyConfig {
                max_len: 8192,
                ..ToyConfig::default()
            },
            ks: DEFAULT_KS.to_vec(),
            trials: 3,
            seed: 0,
            doc_words: 24,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub k: usize,
    pub trial: usize,
    pub ms: f64,
    pub context_tokens: usize,
    pub reused_prefix_tokens: usize,
    pub attention_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub k: usize,
    pub median_ms: f64,
    pub context_tokens: usize,
    pub reused_prefix_tokens: usize,
    pub icr_forward_passes: u64,
    pub listwise_forward_passes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend: String,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
}

impl BenchReport {
    /// `method,K,trial,ms` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,K,trial,ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:.3}\n", r.method, r.k, r.trial, r.ms));
        }
        out
    }
}

const WORDS: &[&str] = &[
    "river", "ancient", "city", "museum", "protein", "engine", "orbit", "harvest", "senate", "poem", "glacier",
    "market", "virus", "bridge", "lantern", "novel", "copper", "island", "treaty", "signal", "forest", "theory",
    "festival", "mineral", "harbor", "canyon", "library", "painter", "voltage", "empire",
];

fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Synthetic query and `k` candidate documents.
pub fn synthetic_instance(k: usize, doc_words: usize, seed: u64) -> (Query, Vec<Document>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query = Query::new("bench", sentence(&mut rng, 6) + "?", QueryStyle::Qa);
    let docs = (0..k)
        .map(|i| {
            let n = doc_words.max(1) + rng.gen_range(0..=doc_words / 4);
            Document::new(format!("d{i}"), sentence(&mut rng, n))
        })
        .collect();
    (query, docs)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Time the full per-query pipeline (both attention passes plus scoring)
/// for each K. Rows come back sorted by K, then trial.
pub fn bench_pipeline(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    if config.trials == 0 || config.ks.is_empty() || config.ks.contains(&0) {
        return Err(BenchError::InvalidParams(
            "need trials ≥ 1 and positive K values".into(),
        ));
    }
    let model = ToyModel::new(config.toy).map_err(|e| BenchError::BackendUnavailable(e.to_string()))?;
    let backend = ToyBackend::new(model);
    let profile = ModelProfile::new(
        backend.name(),
        config.toy.layers,
        config.toy.heads,
        Arc::new(WhitespaceTokenizer::new(config.toy.vocab_size)),
    )
    .map_err(|e| BenchError::BackendUnavailable(e.to_string()))?;
    let mut reranker = Reranker::new(profile, &backend);
    reranker.mode = ScoreMode::Full;

    let mut ks = config.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let jobs: Vec<(usize, usize)> = ks
        .iter()
        .flat_map(|&k| (0..config.trials).map(move |t| (k, t)))
        .collect();

    let run = |&(k, trial): &(usize, usize)| -> Result<BenchRow, BenchError> {
        let (query, docs) = synthetic_instance(k, config.doc_words, config.seed.wrapping_add(k as u64));
        let start = Instant::now();
        let result = reranker.rerank(&query, &docs)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(BenchRow {
            method: Method::Icr.to_string(),
            k,
            trial,
            ms,
            context_tokens: result.context_tokens,
            reused_prefix_tokens: result.reused_prefix_tokens,
            attention_passes: result.forward_passes,
        })
    };
    let rows: Vec<BenchRow> = if config.parallel {
        jobs.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_, _>>()?
    };

    let params = CostParams::default();
    let summary = ks
        .iter()
        .map(|&k| {
            let of_k: Vec<&BenchRow> = rows.iter().filter(|r| r.k == k).collect();
            let mut ms: Vec<f64> = of_k.iter().map(|r| r.ms).collect();
            Ok(BenchSummary {
                k,
                median_ms: median(&mut ms),
                context_tokens: of_k[0].context_tokens,
                reused_prefix_tokens: of_k[0].reused_prefix_tokens,
                icr_forward_passes: count_forward_passes(Method::Icr, k, &params)?.total(),
                listwise_forward_passes: count_forward_passes(Method::ListwiseWindow, k, &params)?.total(),
            })
        })
        .collect::<Result<_, BenchError>>()?;

    Ok(BenchReport {
        backend: backend.name(),
        rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn synthetic_is_seeded() {
        assert_eq!(synthetic_instance(3, 5, 9), synthetic_instance(3, 5, 9));
        assert_ne!(synthetic_instance(3, 5, 9).1, synthetic_instance(3, 5, 10).1);
    }

    #[test]
    fn rejects_zero_trials() {
        let c = BenchConfig {
            trials: 0,
            ..BenchConfig::default()
        };
        assert!(matches!(bench_pipeline(&c), Err(BenchError::InvalidParams(_))));
    }
}
