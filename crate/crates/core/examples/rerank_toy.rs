//! Re-rank a handful of passages with the seeded toy transformer.
//!
//!     cargo run --example rerank_toy

use std::sync::Arc;

use icr::backend::ToyBackend;
use icr::pipeline::Reranker;
use icr::{Document, ModelProfile, Query, QueryStyle, ToyConfig, ToyModel, WhitespaceTokenizer};

fn main() -> anyhow::Result<()> {
    let config = ToyConfig {
        seed: 7,
        ..ToyConfig::default()
    };
    let backend = ToyBackend::new(ToyModel::new(config)?);
    let profile = ModelProfile::new(
        "toy",
        config.layers,
        config.heads,
        Arc::new(WhitespaceTokenizer::new(config.vocab_size)),
    )?;
    let reranker = Reranker::new(profile, &backend);

    // retriever order, best first
    let docs = vec![
        Document::new("k2", "K2 is the second highest mountain on Earth.").with_title("K2"),
        Document::new("everest", "Mount Everest is the highest mountain above sea level.").with_title("Mount Everest"),
        Document::new("nile", "The Nile flows north through eleven countries.").with_title("Nile"),
    ];
    let query = Query::new("q1", "What is the highest mountain?", QueryStyle::Qa);

    let result = reranker.rerank(&query, &docs)?;
    println!(
        "{} tokens, {} forward passes, {} prefix tokens reused",
        result.context_tokens, result.forward_passes, result.reused_prefix_tokens
    );
    for d in &result.documents {
        println!(
            "{:>2}. {:<8} score {:+.5}  (retriever rank {}, {} of {} tokens kept)",
            d.rank,
            d.doc_id,
            d.score,
            d.retriever_rank,
            d.kept_tokens,
            d.tokens.len()
        );
    }
    Ok(())
}
