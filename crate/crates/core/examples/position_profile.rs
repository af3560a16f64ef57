//! How much attention the content-free "N/A" query pays to each document
//! slot, averaged over random prompts. Any structure here is pure position
//! bias, which is exactly what calibration subtracts.
//!
//!     cargo run --release --example position_profile

use std::sync::Arc;

use icr::attention::{aggregate_query_attention, PassTag};
use icr::layout::build_calibration_layout;
use icr::{
    build_prompt, Document, ModelProfile, OrderMode, Query, QueryStyle, ToyConfig, ToyModel, WhitespaceTokenizer,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "storm", "valley", "cotton", "engine", "signal", "marble", "harvest", "planet", "violin", "ladder",
];

fn main() -> anyhow::Result<()> {
    let n_docs = 10;
    let config = ToyConfig {
        seed: 11,
        ..ToyConfig::default()
    };
    let model = ToyModel::new(config)?;
    let profile = ModelProfile::new(
        "toy",
        config.layers,
        config.heads,
        Arc::new(WhitespaceTokenizer::new(config.vocab_size)),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mean_by_slot = vec![0.0; n_docs];
    let prompts = 30;
    for _ in 0..prompts {
        let docs: Vec<Document> = (0..n_docs)
            .map(|i| {
                let len = rng.gen_range(8..16);
                let text: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
                Document::new(format!("d{i}"), text.join(" "))
            })
            .collect();
        let layout = build_prompt(
            &docs,
            &Query::new("q", "anything", QueryStyle::Qa),
            &profile,
            OrderMode::Random(rng.gen()),
        )?;
        let cal = build_calibration_layout(&layout, &profile)?;
        let slice = model.forward_rows(&cal.token_ids, cal.query_span())?;
        let table = aggregate_query_attention(&slice, &cal, PassTag::Calibration)?;
        for (slot, d) in table.docs.iter().enumerate() {
            mean_by_slot[slot] += d.values.iter().sum::<f64>() / d.values.len() as f64 / prompts as f64;
        }
    }
    let max = mean_by_slot.iter().copied().fold(f64::MIN, f64::max);
    for (slot, v) in mean_by_slot.iter().enumerate() {
        println!(
            "slot {:>2}  {:.5}  {}",
            slot + 1,
            v,
            "#".repeat((v / max * 40.0) as usize)
        );
    }
    Ok(())
}
