//! Turns raw web captures into filtered, deduplicated image-text interleaved
//! documents, and models the cost of different stage orderings.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`stream_format`]: the interleaved document model and its JSONL form
//! - [`extract`]: WARC ingestion and main-content extraction from HTML
//! - [`text_filters`]: preliminary heuristics and the rule engine with its
//!   human-feedback harness
//! - [`dedup`]: MinHash/LSH near-duplicate removal and image occurrence limits
//! - [`image_pipeline`]: URL normalisation, Bloom-gated fetching, image
//!   filtering and perceptual hashes
//! - [`scheduler`]: the stage-ordering throughput model
//! - [`metrics`]: per-document quality metrics and histograms
//! - [`pipeline`]: config-driven orchestration used by the CLI

pub mod dedup;
pub mod extract;
pub mod image_pipeline;
pub mod metrics;
pub mod pipeline;
pub mod scheduler;
pub mod stream_format;
pub mod text;
pub mod text_filters;

pub use stream_format::{
    DocumentMeta, Element, ElementTag, ImageRef, ImageStatus, StreamDocument, UNSCORED,
};
