//! Ranking knowledge for a query and packing it into a prompt budget.

mod bm25;
mod context;
mod dense;
mod tokenize;

pub use bm25::{Bm25Index, Bm25Params};
pub use context::{assemble_context, ContextEntry, ContextLimits, RankedKnowledge, RetrievedContext};
pub use dense::{cosine, DenseRetriever, EmbeddingClient, EmbeddingError, HttpEmbeddingClient};
pub use tokenize::tokenize;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("item {0} is already indexed")]
    DuplicateId(String),
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid context configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// The retrieval query for one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: String,
    pub score: f64,
}

/// Score descending, then id ascending.
pub(crate) fn sort_scored(items: &mut [ScoredItem]) {
    items.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
}
