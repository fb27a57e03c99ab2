//! Retrieval-augmented code generation in which both the retrieval query and
//! the knowledge base evolve across generate, execute, retrieve iterations.

pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod executor;
pub mod knowledge;
pub mod llm;
pub mod pipeline;
pub mod query;
pub mod retrieval;
pub mod tokens;
