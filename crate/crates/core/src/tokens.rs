//! Token counting shared by budgets, accounting and item lengths.

use std::fmt;
use std::sync::Arc;

/// Counts LLM tokens for a piece of text.
///
/// One counter instance is threaded through a whole run so that context
/// budgets, item `token_len` values and usage fallbacks agree with each other.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;

    fn name(&self) -> &str;
}

/// `ceil(bytes / 4)`, the usual rule of thumb for BPE vocabularies.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }

    fn name(&self) -> &str {
        "approx-bytes/4"
    }
}

/// Cheaply clonable handle to the run's counter.
#[derive(Clone)]
pub struct SharedCounter(Arc<dyn TokenCounter>);

impl SharedCounter {
    pub fn new<C: TokenCounter + 'static>(counter: C) -> Self {
        Self(Arc::new(counter))
    }

    pub fn count(&self, text: &str) -> usize {
        self.0.count(text)
    }

    pub fn name(&self) -> &str {
        self.0.name()
    }
}

impl Default for SharedCounter {
    fn default() -> Self {
        Self::new(ApproxTokenCounter)
    }
}

impl fmt::Debug for SharedCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("SharedCounter").field(&self.name()).finish()
    }
}
