//! In-context re-ranking: score retrieved documents by the attention an LLM's
//! query tokens pay to them, calibrated against a content-free query.
//!
//! The pieces:
//!
//! - [`layout`] builds the re-ranking prompt and tracks which tokens belong
//!   to each document and to the query.
//! - [`attention`] turns query-row attention into per-token and per-document
//!   scores and a ranking.
//! - [`toy`] and [`backend`] supply attention: a tiny seeded transformer, a
//!   planted-signal generator, or binary dumps written by an external model.
//! - [`icra`] reads, writes and validates those dumps.
//! - [`metrics`] and [`complexity`] cover evaluation and forward-pass
//!   accounting, including the listwise sliding-window baseline.
//! - [`pipeline`], [`viz`] and [`bench`] wire it all together.

pub mod attention;
pub mod backend;
pub mod bench;
pub mod complexity;
pub mod data;
pub mod icra;
pub mod layout;
pub mod metrics;
pub mod pipeline;
pub mod tokenizer;
pub mod toy;
pub mod viz;

pub use attention::{
    aggregate_last_token_attention, aggregate_query_attention, calibrate, filter_and_sum, rank, score_documents,
    AttentionSlice, DocumentScore, FilteredSum, Ranking, ScoreError, ScoreMode, ScoreOutput,
};
pub use backend::{AttentionBackend, BackendError, DumpBackend, PlantConfig, PlantedBackend, ToyBackend};
pub use layout::{
    build_calibration_layout, build_prompt, build_prompt_with, Document, LayoutError, ModelProfile, OrderMode,
    PromptLayout, PromptOptions, Query, QueryStyle,
};
pub use pipeline::{PipelineError, QueryResult, Reranker, RunConfig};
pub use tokenizer::{ChunkTokenizer, Tokenizer, WhitespaceTokenizer};
pub use toy::{PlantSpec, ToyConfig, ToyModel};
