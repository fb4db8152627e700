//! Session-based new-item recommendation.
//!
//! A session's history becomes a directed graph whose nodes are encoded by a
//! gated graph network; two attention heads (a soft-attention head and a
//! Beta-density head) summarize the user's intent, and never-seen candidate
//! items are embedded from their attributes through a learned map aligned
//! with the graph embeddings by a Bhattacharyya loss.

pub mod autodiff;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod intent;
pub mod model;
pub mod sessiongraph;
pub mod toy;
pub mod zeroshot;

pub use error::{Error, Result};
