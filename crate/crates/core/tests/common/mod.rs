#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use icr::{build_prompt, Document, ModelProfile, OrderMode, PromptLayout, Query, QueryStyle, WhitespaceTokenizer};
use rand::seq::SliceRandom;
use rand::Rng;

pub const WORDS: &[&str] = &[
    "alpha", "river", "stone", "cloud", "engine", "violet", "harbor", "pepper", "comet", "garden", "silver", "bridge",
    "marble", "falcon", "winter", "copper", "lantern", "meadow", "orbit", "canyon",
];

pub fn words(rng: &mut impl Rng, n: usize) -> String {
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn profile(layers: usize, heads: usize, vocab: u32) -> ModelProfile {
    ModelProfile::new("test", layers, heads, Arc::new(WhitespaceTokenizer::new(vocab))).unwrap()
}

/// Documents `d0..` with word counts drawn from `doc_words`.
pub fn random_docs(rng: &mut impl Rng, n: usize, doc_words: std::ops::RangeInclusive<usize>) -> Vec<Document> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(doc_words.clone());
            Document::new(format!("d{i}"), words(rng, len))
        })
        .collect()
}

pub fn random_query(rng: &mut impl Rng, n_words: std::ops::RangeInclusive<usize>) -> Query {
    let style = if rng.gen_bool(0.5) {
        QueryStyle::Qa
    } else {
        QueryStyle::Ie
    };
    let len = rng.gen_range(n_words);
    Query::new("q", words(rng, len), style)
}

pub fn layout(docs: &[Document], query: &Query, profile: &ModelProfile, order: OrderMode) -> PromptLayout {
    build_prompt(docs, query, profile, order).unwrap()
}

/// A tiny corpus, three queries and their candidate lists on disk.
pub fn write_fixture(dir: &Path) {
    let corpus = [
        (
            "d1",
            "Mount Everest",
            "Mount Everest is the highest mountain above sea level.",
        ),
        ("d2", "Nile", "The Nile is a major river flowing north through Africa."),
        ("d3", "", "Copper is a soft and ductile metal with high conductivity."),
        (
            "d4",
            "Pacific Ocean",
            "The Pacific is the largest and deepest ocean on Earth.",
        ),
        ("d5", "Sahara", "The Sahara is a desert spanning most of North Africa."),
        ("d6", "K2", "K2 is the second highest mountain on Earth after Everest."),
        (
            "d7",
            "Amazon",
            "The Amazon river carries more water than any other river.",
        ),
        (
            "d8",
            "Silver",
            "Silver has the highest electrical conductivity of any element.",
        ),
    ];
    let mut c = String::new();
    for (id, title, text) in corpus {
        c.push_str(&serde_json::json!({"_id": id, "title": title, "text": text}).to_string());
        c.push('\n');
    }
    std::fs::write(dir.join("corpus.jsonl"), c).unwrap();
    std::fs::write(
        dir.join("queries.jsonl"),
        "{\"_id\":\"q1\",\"text\":\"What is the highest mountain?\"}\n\
         {\"_id\":\"q2\",\"text\":\"longest river in Africa\",\"style\":\"ie\"}\n\
         {\"_id\":\"q3\",\"text\":\"Which metal conducts electricity best?\"}\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("candidates.jsonl"),
        "{\"qid\":\"q1\",\"docids\":[\"d6\",\"d1\",\"d4\",\"d5\"]}\n\
         {\"qid\":\"q2\",\"docids\":[\"d7\",\"d2\",\"d5\"]}\n\
         {\"qid\":\"q3\",\"docids\":[\"d3\",\"d8\",\"d1\",\"d2\",\"d4\"]}\n",
    )
    .unwrap();
}
