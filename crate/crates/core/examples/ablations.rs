//! The four scoring modes on one planted instance: with and without
//! calibration, aggregating over all query tokens or only the last one.
//! `neither` is plain attention sorting.
//!
//!     cargo run --example ablations

use std::collections::HashMap;
use std::sync::Arc;

use icr::backend::{PlantConfig, PlantedBackend};
use icr::pipeline::Reranker;
use icr::{Document, ModelProfile, Query, QueryStyle, ScoreMode, WhitespaceTokenizer};

fn main() -> anyhow::Result<()> {
    let docs: Vec<Document> = (0..6)
        .map(|i| {
            Document::new(
                format!("d{i}"),
                "lorem ipsum dolor sit amet ".repeat(1 + i % 3).trim_end().to_string(),
            )
        })
        .collect();
    let query = Query::new("q", "which passage mentions the answer?", QueryStyle::Ie);
    let plant = PlantConfig {
        boost: 0.6,
        base: 1.0,
        position_bias: vec![1.5, 0.2, 0.0, 0.0, 0.4, 1.0],
        layers: 1,
        heads: 4,
        targets: HashMap::from([("q".into(), "d3".into())]),
    };
    let backend = PlantedBackend::new(plant);
    let profile = ModelProfile::new("planted", 1, 4, Arc::new(WhitespaceTokenizer::new(4096)))?;

    println!("target d3\n");
    for mode in ScoreMode::ALL {
        let mut r = Reranker::new(profile.clone(), &backend);
        r.mode = mode;
        let res = r.rerank(&query, &docs)?;
        let ids: Vec<&str> = res.documents.iter().map(|d| d.doc_id.as_str()).collect();
        println!(
            "{:<16} passes {}  {}",
            mode.to_string(),
            res.forward_passes,
            ids.join(" > ")
        );
    }
    Ok(())
}
