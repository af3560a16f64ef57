//! Re-rank the same candidates under different presentation orders and
//! measure how much the final ranking moves.
//!
//!     cargo run --example order_robustness

use std::sync::Arc;

use icr::backend::ToyBackend;
use icr::pipeline::Reranker;
use icr::{Document, ModelProfile, OrderMode, Query, QueryStyle, ToyConfig, ToyModel, WhitespaceTokenizer};

fn main() -> anyhow::Result<()> {
    let config = ToyConfig {
        seed: 3,
        ..ToyConfig::default()
    };
    let backend = ToyBackend::new(ToyModel::new(config)?);
    let profile = ModelProfile::new(
        "toy",
        config.layers,
        config.heads,
        Arc::new(WhitespaceTokenizer::new(config.vocab_size)),
    )?;
    let docs: Vec<Document> = (0..8)
        .map(|i| {
            Document::new(
                format!("d{i}"),
                format!("document {i} mentions subject {} and subject {}", i % 3, i % 5),
            )
        })
        .collect();
    let query = Query::new("q", "which documents mention subject 2?", QueryStyle::Ie);

    let mut rankings = Vec::new();
    for order in [
        OrderMode::Retriever,
        OrderMode::Reversed,
        OrderMode::Random(1),
        OrderMode::Random(2),
    ] {
        let mut r = Reranker::new(profile.clone(), &backend);
        r.order = order;
        let ids: Vec<String> = r
            .rerank(&query, &docs)?
            .documents
            .into_iter()
            .map(|d| d.doc_id)
            .collect();
        println!("{:<12} {}", order.to_string(), ids.join(" "));
        rankings.push(ids);
    }
    let top3 = |r: &Vec<String>| r[..3].to_vec();
    let stable = rankings
        .iter()
        .filter(|r| top3(r).iter().all(|d| top3(&rankings[1]).contains(d)))
        .count();
    println!("\n{stable}/{} orders share the reversed-order top 3", rankings.len());
    Ok(())
}
