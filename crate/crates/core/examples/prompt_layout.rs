//! Build the re-ranking prompt, show where each document and the query sit in
//! token space, and print the layout JSON handed to external exporters.
//!
//!     cargo run --example prompt_layout

use std::sync::Arc;

use icr::layout::{build_calibration_layout, OrderMode};
use icr::{build_prompt, Document, ModelProfile, Query, QueryStyle, WhitespaceTokenizer};

fn main() -> anyhow::Result<()> {
    let profile = ModelProfile::new("toy", 1, 1, Arc::new(WhitespaceTokenizer::new(4096)))?
        .with_markers("<s>[INST] ", " [/INST]");
    let docs = vec![
        Document::new("a", "Paris is the capital of France.").with_title("Paris"),
        Document::new("b", "Lyon is known for its cuisine."),
        Document::new("c", "Marseille is a port city."),
    ];
    let query = Query::new("q7", "capital of France", QueryStyle::Ie);

    let layout = build_prompt(&docs, &query, &profile, OrderMode::Reversed)?;
    println!("{}\n", layout.prompt);
    for d in &layout.documents {
        println!(
            "[{}] {:<2} retriever rank {}  tokens {:?}",
            d.identifier, d.doc_id, d.retriever_rank, d.tokens
        );
    }
    println!("query tokens {:?}", layout.query_span());

    let cal = build_calibration_layout(&layout, &profile)?;
    println!(
        "calibration prompt ends with: {:?}",
        &cal.prompt[cal.prompt.len() - 20..]
    );
    println!("\n{}", serde_json::to_string_pretty(&cal.to_export(&profile.name))?);
    Ok(())
}
