//! The retrieval query: the problem text at warm-up, rewritten by the query
//! evolver on later iterations.

use log::warn;
use thiserror::Error;

use crate::executor::TestInput;
use crate::llm::{ChatExchange, Gateway, ModelRole, PromptKind, PromptSet};
use crate::retrieval::Query;

#[derive(Debug, Error)]
#[error("problem description is empty")]
pub struct EmptyProblem;

pub fn initial_query(problem: &str) -> Result<Query, EmptyProblem> {
    if problem.trim().is_empty() {
        return Err(EmptyProblem);
    }
    Ok(Query {
        text: problem.to_string(),
        iteration: 0,
    })
}

#[derive(Debug, Clone)]
pub struct EvolvedQuery {
    pub query: Query,
    /// The evolver call, when one completed.
    pub exchange: Option<ChatExchange>,
    /// True when the query fell back to the problem text.
    pub fallback: bool,
}

/// Asks the query evolver what knowledge the next attempt needs.
///
/// The first paragraph of the completion becomes the query. If the call
/// fails or yields nothing usable the problem text is used instead.
pub fn evolve_query(
    gateway: &Gateway,
    prompts: &PromptSet,
    problem: &str,
    prev_program: &str,
    inputs: &[TestInput],
    prev_feedback: &str,
    iteration: usize,
) -> EvolvedQuery {
    let fallback = |exchange| EvolvedQuery {
        query: Query {
            text: problem.to_string(),
            iteration,
        },
        exchange,
        fallback: true,
    };
    let prompt = match prompts.render(&PromptKind::EvolveQuery {
        problem,
        program: prev_program,
        inputs,
        feedback: prev_feedback,
    }) {
        Ok(p) => p,
        Err(e) => {
            warn!("query evolution prompt failed: {e}");
            return fallback(None);
        }
    };
    let exchange = match gateway.complete(ModelRole::QueryEvolver, &prompt) {
        Ok(ex) => ex,
        Err(e) => {
            warn!("query evolution failed, reusing the problem text: {e}");
            return fallback(None);
        }
    };
    match first_paragraph(&exchange.completion) {
        Some(text) => EvolvedQuery {
            query: Query { text, iteration },
            exchange: Some(exchange),
            fallback: false,
        },
        None => fallback(Some(exchange)),
    }
}

/// First non-empty block of lines, trimmed.
pub fn first_paragraph(text: &str) -> Option<String> {
    let mut lines = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !lines.is_empty() {
                break;
            }
        } else {
            lines.push(line.trim());
        }
    }
    (!lines.is_empty()).then(|| lines.join("\n"))
}
