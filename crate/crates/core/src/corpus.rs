//! Knowledge seeding and test-input utilities run before benchmarks.

use std::collections::HashSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::evaluation::percent;
use crate::executor::{aggregate, execute, feedback_message, ExecError, LanguageProfile, TestInput};
use crate::knowledge::{KnowledgeItem, KnowledgeStore};
use crate::llm::{extract_code, Gateway, ModelRole, PromptKind, PromptSet};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no gold program to validate inputs against")]
    MissingGold,
    #[error("no inputs given")]
    NoInputs,
    #[error("target count {target} is below the {have} inputs given")]
    TargetTooSmall { target: usize, have: usize },
    #[error("could not reach {target} distinct inputs after {attempts} mutations")]
    Exhausted { target: usize, attempts: usize },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SeedCounts {
    pub snippets: usize,
    pub pairs: usize,
}

/// Asks the generator for a short usage script per documentation item,
/// runs it, and files it as a verified snippet on success or as a
/// (program, error) pair on failure.
///
/// Completions are requested in item order; executions run in parallel and
/// results are written back in item order.
pub fn seed_snippets(
    store: &KnowledgeStore,
    doc_items: &[KnowledgeItem],
    profile: &LanguageProfile,
    gateway: &Gateway,
    prompts: &PromptSet,
    language: &str,
) -> SeedCounts {
    let mut drafts = Vec::new();
    for item in doc_items {
        let prompt = match prompts.render(&PromptKind::SeedSnippet {
            language,
            doc: &item.text,
        }) {
            Ok(p) => p,
            Err(e) => {
                warn!("seed prompt for {}: {e}", item.id);
                continue;
            }
        };
        match gateway.complete(ModelRole::Generator, &prompt) {
            Ok(exchange) => {
                let code = extract_code(&exchange.completion);
                if code.trim().is_empty() {
                    warn!("empty usage script for {}", item.id);
                } else {
                    drafts.push((item.id.clone(), code));
                }
            }
            Err(e) => warn!("usage script for {}: {e}", item.id),
        }
    }

    let runs: Vec<_> = drafts
        .par_iter()
        .map(|(_, code)| execute(code, &[], profile).and_then(|f| aggregate(&f)))
        .collect();

    let mut counts = SeedCounts::default();
    for ((id, code), run) in drafts.iter().zip(runs) {
        match run {
            Ok(f) if f.is_success() => {
                store.add_verified_snippet(code, id);
                counts.snippets += 1;
            }
            Ok(f) => match store.add_feedback_pair(code, &feedback_message(&f, code)) {
                Ok(_) => counts.pairs += 1,
                Err(e) => warn!("feedback pair for {id}: {e}"),
            },
            Err(e) => warn!("running usage script for {id}: {e}"),
        }
    }
    if counts == SeedCounts::default() && !doc_items.is_empty() {
        warn!("snippet seeding produced nothing for {} documentation items", doc_items.len());
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputValidity {
    pub valid: usize,
    pub total: usize,
    /// Percent of inputs on which the gold program reported no error.
    pub rate: f64,
    pub all_valid: bool,
}

pub fn validate_inputs(
    gold: Option<&str>,
    inputs: &[TestInput],
    profile: &LanguageProfile,
) -> Result<InputValidity, CorpusError> {
    let gold = gold.ok_or(CorpusError::MissingGold)?;
    if inputs.is_empty() {
        return Err(CorpusError::NoInputs);
    }
    let runs = execute(gold, inputs, profile)?;
    // A compile failure yields one feedback for all inputs.
    let valid = if runs.len() == inputs.len() {
        runs.iter().filter(|f| f.is_success()).count()
    } else {
        0
    };
    Ok(InputValidity {
        valid,
        total: inputs.len(),
        rate: percent(valid, inputs.len()),
        all_valid: valid == inputs.len(),
    })
}

const ATTEMPTS_PER_INPUT: usize = 1000;

/// Extends `inputs` with mutated copies until `target` distinct inputs
/// exist. Originals come first and are kept as given.
///
/// Each new input is one mutation away from an earlier input: integers move
/// by one, strings swap two adjacent characters, and whitespace-separated
/// lists gain a duplicated element or lose one (never the last). Inputs with
/// no tokens are mutated character by character.
pub fn mutate_inputs(inputs: &[TestInput], target: usize, seed: u64) -> Result<Vec<TestInput>, CorpusError> {
    if inputs.is_empty() {
        return Err(CorpusError::NoInputs);
    }
    if target < inputs.len() {
        return Err(CorpusError::TargetTooSmall {
            target,
            have: inputs.len(),
        });
    }
    let token_re = Regex::new(r"\S+").expect("static regex");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<TestInput> = inputs.to_vec();
    let mut seen: HashSet<String> = out.iter().map(|i| i.as_str().to_string()).collect();
    let max_attempts = ATTEMPTS_PER_INPUT * (target - inputs.len()).max(1);
    let mut attempts = 0;
    while out.len() < target {
        if attempts == max_attempts {
            return Err(CorpusError::Exhausted { target, attempts });
        }
        attempts += 1;
        let base = out[rng.random_range(0..out.len())].as_str().to_string();
        if let Some(next) = mutate_once(&base, &token_re, &mut rng) {
            if seen.insert(next.clone()) {
                out.push(TestInput::new(next));
            }
        }
    }
    Ok(out)
}

fn mutate_once(text: &str, token_re: &Regex, rng: &mut ChaCha8Rng) -> Option<String> {
    let spans: Vec<(usize, usize)> = token_re.find_iter(text).map(|m| (m.start(), m.end())).collect();
    if spans.is_empty() {
        return mutate_raw(text, rng);
    }
    let (start, end) = spans[rng.random_range(0..spans.len())];
    let line_start = text[..start].rfind('\n').map_or(0, |i| i + 1);
    let line_end = text[end..].find('\n').map_or(text.len(), |i| end + i);
    let line_tokens = spans
        .iter()
        .filter(|(s, e)| *s >= line_start && *e <= line_end)
        .count();
    let token = &text[start..end];

    if line_tokens >= 2 && rng.random_bool(1.0 / 3.0) {
        return Some(if rng.random_bool(0.5) {
            format!("{} {}", &text[..end], &text[start..])
        } else {
            remove_token(text, start, end, line_start)
        });
    }
    let replacement = match token.parse::<i64>() {
        Ok(n) => {
            let delta = if rng.random_bool(0.5) { 1 } else { -1 };
            n.checked_add(delta)?.to_string()
        }
        Err(_) => swap_adjacent(token, rng)?,
    };
    Some(format!("{}{}{}", &text[..start], replacement, &text[end..]))
}

/// Drops the token together with the whitespace that separates it from its
/// neighbour on the same line.
fn remove_token(text: &str, start: usize, end: usize, line_start: usize) -> String {
    let before = &text[line_start..start];
    if before.trim().is_empty() {
        // First on its line: take the following gap.
        let rest = &text[end..];
        let gap = rest.len() - rest.trim_start_matches([' ', '\t']).len();
        format!("{}{}", &text[..start], &text[end + gap..])
    } else {
        let head = text[..start].trim_end_matches([' ', '\t']);
        format!("{}{}", head, &text[end..])
    }
}

fn swap_adjacent(s: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let mut chars: Vec<char> = s.chars().collect();
    if chars.len() < 2 {
        return None;
    }
    let i = rng.random_range(0..chars.len() - 1);
    chars.swap(i, i + 1);
    Some(chars.into_iter().collect())
}

fn mutate_raw(text: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let mut chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return None;
    }
    match rng.random_range(0..3) {
        0 => return swap_adjacent(text, rng),
        1 => {
            let i = rng.random_range(0..chars.len());
            chars.insert(i, chars[i]);
        }
        _ => {
            if chars.len() < 2 {
                return None;
            }
            chars.remove(rng.random_range(0..chars.len()));
        }
    }
    Some(chars.into_iter().collect())
}
