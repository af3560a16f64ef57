//! The calibration prompt differs from the real one only after "Query: ", so
//! its forward pass can start from the cached keys and values of the shared
//! prefix. The attention rows come out bitwise identical either way.
//!
//!     cargo run --release --example kv_prefix_reuse

use std::sync::Arc;
use std::time::Instant;

use icr::layout::build_calibration_layout;
use icr::{
    build_prompt, Document, ModelProfile, OrderMode, Query, QueryStyle, ToyConfig, ToyModel, WhitespaceTokenizer,
};

fn main() -> anyhow::Result<()> {
    let config = ToyConfig {
        layers: 4,
        heads: 4,
        model_dim: 64,
        ..ToyConfig::default()
    };
    let model = ToyModel::new(config)?;
    let profile = ModelProfile::new("toy", 4, 4, Arc::new(WhitespaceTokenizer::new(config.vocab_size)))?;
    let docs: Vec<Document> = (0..20)
        .map(|i| {
            Document::new(
                format!("d{i}"),
                format!(
                    "passage {i} talks about topic {} in some detail with several extra words",
                    i * 7
                ),
            )
        })
        .collect();
    let layout = build_prompt(
        &docs,
        &Query::new("q", "which passage covers topic 42?", QueryStyle::Qa),
        &profile,
        OrderMode::Reversed,
    )?;
    let cal = build_calibration_layout(&layout, &profile)?;

    let t = Instant::now();
    let scratch = model.forward_rows(&cal.token_ids, cal.query_span())?;
    let cold = t.elapsed();

    let (_, cache) = model.forward_rows_with_cache(&layout.token_ids, layout.query_span())?;
    let t = Instant::now();
    let (cached, reused) = model.forward_rows_cached(&cache, &cal.token_ids, cal.query_span())?;
    let warm = t.elapsed();

    let identical = scratch
        .weights()
        .iter()
        .zip(cached.weights())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "calibration prompt: {} tokens, {} served from cache",
        cal.total_len(),
        reused
    );
    println!("from scratch {cold:?}, with cache {warm:?}, rows bitwise identical: {identical}");
    Ok(())
}
