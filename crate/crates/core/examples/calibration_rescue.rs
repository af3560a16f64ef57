//! Planted attention with a strong position bias: the document shown first
//! soaks up attention regardless of the query. Subtracting the scores of a
//! content-free query removes the bias and recovers the planted target.
//!
//!     cargo run --example calibration_rescue

use std::collections::HashMap;
use std::sync::Arc;

use icr::backend::{PlantConfig, PlantedBackend};
use icr::pipeline::Reranker;
use icr::{Document, ModelProfile, Query, QueryStyle, ScoreMode, WhitespaceTokenizer};

fn main() -> anyhow::Result<()> {
    let docs: Vec<Document> = [
        "seals hunt fish under ice",
        "tides follow the moon closely",
        "owls hunt mice at night",
        "bees make honey from nectar",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| Document::new(format!("d{i}"), *t))
    .collect();
    let query = Query::new("q", "what do owls eat?", QueryStyle::Qa);

    // d2 carries the signal; the first presented slot gets twice that much bias
    let plant = PlantConfig {
        boost: 1.0,
        base: 1.0,
        position_bias: vec![2.0],
        layers: 2,
        heads: 2,
        targets: HashMap::from([("q".into(), "d2".into())]),
    };
    let backend = PlantedBackend::new(plant);
    let profile = ModelProfile::new("planted", 2, 2, Arc::new(WhitespaceTokenizer::new(4096)))?;

    for mode in [ScoreMode::NoCalibration, ScoreMode::Full] {
        let mut r = Reranker::new(profile.clone(), &backend);
        r.mode = mode;
        let res = r.rerank(&query, &docs)?;
        let order: Vec<String> = res
            .documents
            .iter()
            .map(|d| format!("{} ({:+.4})", d.doc_id, d.score))
            .collect();
        println!("{:<15} {}", mode.to_string(), order.join("  "));
    }
    Ok(())
}
