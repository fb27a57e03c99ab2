//! Deterministic chat backends for tests and dry runs.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use super::backend::{ChatBackend, ChatRequest, ChatResponse, TransportError, Usage};
use super::ModelRole;

#[derive(Debug, Clone)]
pub enum ScriptStep {
    Reply { content: String, usage: Option<Usage> },
    Fail(TransportError),
}

#[derive(Default)]
struct ScriptState {
    queues: HashMap<ModelRole, VecDeque<ScriptStep>>,
    fallback: HashMap<ModelRole, ScriptStep>,
    log: Vec<(ModelRole, ChatRequest)>,
}

/// Replays a fixed per-role sequence of replies and failures.
///
/// When a role's queue runs dry its fallback step (if any) repeats forever;
/// otherwise the call fails with a non-transient error.
#[derive(Default)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(self, role: ModelRole, step: ScriptStep) -> Self {
        self.lock().queues.entry(role).or_default().push_back(step);
        self
    }

    pub fn reply(self, role: ModelRole, content: &str) -> Self {
        self.push(
            role,
            ScriptStep::Reply {
                content: content.into(),
                usage: None,
            },
        )
    }

    pub fn reply_with_usage(self, role: ModelRole, content: &str, prompt: usize, completion: usize) -> Self {
        self.push(
            role,
            ScriptStep::Reply {
                content: content.into(),
                usage: Some(Usage {
                    prompt_tokens: prompt,
                    completion_tokens: completion,
                }),
            },
        )
    }

    pub fn fail(self, role: ModelRole, message: &str) -> Self {
        self.push(role, ScriptStep::Fail(TransportError::transient(message)))
    }

    pub fn otherwise(self, role: ModelRole, step: ScriptStep) -> Self {
        self.lock().fallback.insert(role, step);
        self
    }

    pub fn otherwise_reply(self, role: ModelRole, content: &str) -> Self {
        self.otherwise(
            role,
            ScriptStep::Reply {
                content: content.into(),
                usage: None,
            },
        )
    }

    /// Every request received so far, in call order.
    pub fn calls(&self) -> Vec<(ModelRole, ChatRequest)> {
        self.lock().log.clone()
    }

    pub fn call_count(&self, role: ModelRole) -> usize {
        self.lock().log.iter().filter(|(r, _)| *r == role).count()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ScriptState> {
        self.state.lock().expect("script state poisoned")
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, role: ModelRole, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut state = self.lock();
        state.log.push((role, request.clone()));
        let step = match state.queues.get_mut(&role).and_then(VecDeque::pop_front) {
            Some(step) => step,
            None => state
                .fallback
                .get(&role)
                .cloned()
                .ok_or_else(|| TransportError::fatal(format!("script for {role} exhausted")))?,
        };
        match step {
            ScriptStep::Reply { content, usage } => Ok(ChatResponse { content, usage }),
            ScriptStep::Fail(e) => Err(e),
        }
    }
}

/// Backend computed by a closure over the role and request.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(ModelRole, &ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync,
{
    fn chat(&self, role: ModelRole, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        (self.0)(role, request)
    }
}
