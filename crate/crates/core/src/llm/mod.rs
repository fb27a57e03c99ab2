//! Chat-completion access for the three model roles, with retries, token
//! accounting and prompt templates.

mod backend;
pub mod mock;
mod prompt;

pub use backend::{
    ChatBackend, ChatMessage, ChatRequest, ChatResponse, HttpChatBackend, TransportError, Usage,
};
pub use prompt::{PromptKind, PromptSet, Template, TemplateError};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::SharedCounter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// Writes candidate programs.
    Generator,
    /// Rewrites the retrieval query from the last attempt.
    QueryEvolver,
    /// Writes test inputs for a problem.
    TestGenerator,
}

impl ModelRole {
    pub const ALL: [ModelRole; 3] = [
        ModelRole::Generator,
        ModelRole::QueryEvolver,
        ModelRole::TestGenerator,
    ];
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelRole::Generator => "generator",
            ModelRole::QueryEvolver => "query_evolver",
            ModelRole::TestGenerator => "test_generator",
        })
    }
}

fn default_temperature() -> f64 {
    0.0
}

fn default_max_output() -> usize {
    400
}

fn default_window() -> usize {
    16_384
}

/// Endpoint and sampling settings for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    #[serde(default)]
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: usize,
    #[serde(default = "default_window")]
    pub context_window: usize,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl RoleConfig {
    pub fn named(model: &str) -> Self {
        Self {
            base_url: String::new(),
            model: model.to_string(),
            temperature: default_temperature(),
            max_output_tokens: default_max_output(),
            context_window: default_window(),
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no model configured for role {0}")]
    UnknownRole(ModelRole),
    #[error("{role}: prompt of {prompt_tokens} tokens plus {max_output} output tokens exceeds the {window}-token window")]
    ContextOverflow {
        role: ModelRole,
        prompt_tokens: usize,
        max_output: usize,
        window: usize,
    },
    #[error("{role}: request failed after {attempts} attempt(s): {message}")]
    Transport {
        role: ModelRole,
        attempts: u32,
        message: String,
    },
}

/// One completed call with its usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub role: ModelRole,
    pub prompt: String,
    pub completion: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub attempts: u32,
}

impl ChatExchange {
    pub fn total_tokens(&self) -> usize {
        self.prompt_tokens + self.completion_tokens
    }
}

struct RoleBinding {
    config: RoleConfig,
    backend: Arc<dyn ChatBackend>,
}

/// Routes prompts to the backend bound to each role.
pub struct Gateway {
    roles: BTreeMap<ModelRole, RoleBinding>,
    counter: SharedCounter,
    retry: RetryPolicy,
    tokens: AtomicU64,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(counter: SharedCounter) -> Self {
        Self {
            roles: BTreeMap::new(),
            counter,
            retry: RetryPolicy::default(),
            tokens: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    /// Binds every role to the same backend with default settings.
    pub fn uniform(backend: Arc<dyn ChatBackend>, counter: SharedCounter) -> Self {
        let mut gw = Self::new(counter).with_retry(RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::ZERO,
        });
        for role in ModelRole::ALL {
            gw = gw.with_role(role, RoleConfig::named("mock"), backend.clone());
        }
        gw
    }

    pub fn with_role(mut self, role: ModelRole, config: RoleConfig, backend: Arc<dyn ChatBackend>) -> Self {
        self.roles.insert(role, RoleBinding { config, backend });
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn counter(&self) -> &SharedCounter {
        &self.counter
    }

    /// Checks that every role is bound.
    pub fn validate(&self) -> Result<(), GatewayError> {
        for role in ModelRole::ALL {
            if !self.roles.contains_key(&role) {
                return Err(GatewayError::UnknownRole(role));
            }
        }
        Ok(())
    }

    pub fn role_config(&self, role: ModelRole) -> Option<&RoleConfig> {
        self.roles.get(&role).map(|b| &b.config)
    }

    /// Tokens consumed by all calls through this gateway.
    pub fn total_tokens(&self) -> u64 {
        self.tokens.load(Ordering::SeqCst)
    }

    pub fn total_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, role: ModelRole, prompt: &str) -> Result<ChatExchange, GatewayError> {
        let binding = self.roles.get(&role).ok_or(GatewayError::UnknownRole(role))?;
        let cfg = &binding.config;
        let prompt_tokens = self.counter.count(prompt);
        if prompt_tokens + cfg.max_output_tokens > cfg.context_window {
            return Err(GatewayError::ContextOverflow {
                role,
                prompt_tokens,
                max_output: cfg.max_output_tokens,
                window: cfg.context_window,
            });
        }
        let request = ChatRequest {
            model: cfg.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature: cfg.temperature,
            max_tokens: cfg.max_output_tokens,
        };

        let mut attempts = 0u32;
        let mut backoff = self.retry.initial_backoff;
        let response = loop {
            attempts += 1;
            match binding.backend.chat(role, &request) {
                Ok(resp) => break resp,
                Err(e) if e.transient && attempts <= self.retry.max_retries => {
                    warn!("{role}: attempt {attempts} failed ({e}); retrying");
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                    backoff *= 2;
                }
                Err(e) => {
                    return Err(GatewayError::Transport {
                        role,
                        attempts,
                        message: e.message,
                    })
                }
            }
        };

        let usage = response.usage.unwrap_or_else(|| Usage {
            prompt_tokens,
            completion_tokens: self.counter.count(&response.content),
        });
        let exchange = ChatExchange {
            role,
            prompt: prompt.to_string(),
            completion: response.content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            attempts,
        };
        self.tokens
            .fetch_add(exchange.total_tokens() as u64, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        debug!("{role}: {} tokens in {attempts} attempt(s)", exchange.total_tokens());
        Ok(exchange)
    }
}

/// A fenced block: its info string (after the opening backticks) and body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    pub info: String,
    pub body: String,
}

/// All ``` fenced blocks in `text`. An unclosed fence runs to the end.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match open.take() {
            None => {
                if let Some(info) = trimmed.strip_prefix("```") {
                    open = Some((info.trim().to_string(), Vec::new()));
                }
            }
            Some((info, mut body)) => {
                if trimmed.trim_end() == "```" {
                    blocks.push(FencedBlock {
                        info,
                        body: body.join("\n"),
                    });
                } else {
                    body.push(line);
                    open = Some((info, body));
                }
            }
        }
    }
    if let Some((info, body)) = open {
        blocks.push(FencedBlock {
            info,
            body: body.join("\n"),
        });
    }
    blocks
}

/// The program in a completion: the last fenced block, or the whole
/// completion when there is none.
pub fn extract_code(completion: &str) -> String {
    match fenced_blocks(completion).pop() {
        Some(block) => block.body,
        None => completion.trim().to_string(),
    }
}
