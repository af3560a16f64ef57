//! Re-rank with the toy model and render the per-token scores as an HTML
//! heatmap (blue for positive, red for negative).
//!
//!     cargo run --example token_heatmap -- heatmap.html

use std::sync::Arc;

use icr::backend::ToyBackend;
use icr::pipeline::{Reranker, TokenScoreFile};
use icr::viz::render_heatmap;
use icr::{Document, ModelProfile, Query, QueryStyle, ScoreMode, ToyConfig, ToyModel, WhitespaceTokenizer};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "heatmap.html".into());
    let config = ToyConfig::default();
    let backend = ToyBackend::new(ToyModel::new(config)?);
    let profile = ModelProfile::new(
        "toy",
        config.layers,
        config.heads,
        Arc::new(WhitespaceTokenizer::new(config.vocab_size)),
    )?;
    let reranker = Reranker::new(profile, &backend);

    let docs = vec![
        Document::new(
            "1",
            "The <b>Rhine</b> rises in the Swiss Alps & flows to the North Sea.",
        )
        .with_title("Rhine"),
        Document::new(
            "2",
            "The Danube passes through ten countries before reaching the Black Sea.",
        )
        .with_title("Danube"),
    ];
    let query = Query::new("q", "Where does the Rhine begin?", QueryStyle::Qa);
    let result = reranker.rerank(&query, &docs)?;
    let file = TokenScoreFile {
        mode: ScoreMode::Full,
        backend: "toy".into(),
        queries: vec![result],
    };
    std::fs::write(&out, render_heatmap(&file))?;
    println!("wrote {out}");
    Ok(())
}
