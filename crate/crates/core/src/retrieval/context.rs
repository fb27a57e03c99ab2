use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::knowledge::{KnowledgeItem, KnowledgeKind};
use crate::tokens::SharedCounter;

/// Token limits that govern context packing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextLimits {
    pub context_limit: usize,
    pub generation_reserve: usize,
    pub snippet_budget: usize,
}

impl ContextLimits {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.context_limit > self.generation_reserve + self.snippet_budget {
            Ok(())
        } else {
            Err(RetrievalError::Config(format!(
                "context_limit {} must exceed generation_reserve {} + snippet_budget {}",
                self.context_limit, self.generation_reserve, self.snippet_budget
            )))
        }
    }

    /// Tokens available to retrieved knowledge.
    pub fn available(&self) -> usize {
        self.context_limit - self.generation_reserve
    }
}

/// Ranked candidates per knowledge kind, best first.
#[derive(Debug, Clone, Default)]
pub struct RankedKnowledge {
    pub web: Vec<KnowledgeItem>,
    pub feedback: Vec<KnowledgeItem>,
    pub snippets: Vec<KnowledgeItem>,
    pub docs: Vec<KnowledgeItem>,
}

/// One knowledge item as it will appear in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub id: String,
    pub kind: KnowledgeKind,
    pub text: String,
    pub tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub web: Vec<ContextEntry>,
    pub feedback: Vec<ContextEntry>,
    pub snippets: Vec<ContextEntry>,
    pub docs: Vec<ContextEntry>,
    pub total_tokens: usize,
    /// Budget that was left for documentation after the other kinds.
    pub doc_budget: usize,
}

impl RetrievedContext {
    pub fn is_empty(&self) -> bool {
        self.web.is_empty() && self.feedback.is_empty() && self.snippets.is_empty() && self.docs.is_empty()
    }
}

/// Feedback pairs contribute their error message, which already carries the
/// offending source line; other kinds contribute their full text.
fn render(item: &KnowledgeItem) -> &str {
    match item.kind {
        KnowledgeKind::FeedbackPair => item.error.as_deref().unwrap_or(&item.text),
        _ => &item.text,
    }
}

/// Greedily packs ranked knowledge into the prompt budget.
///
/// Fill order is feedback, then code snippets (capped at `snippet_budget`),
/// then web content, then documentation, each kind taking whatever the
/// earlier kinds left of `context_limit - generation_reserve`. Items are
/// taken whole in rank order; one that would overflow is skipped and the
/// next one is tried.
pub fn assemble_context(
    ranked: &RankedKnowledge,
    limits: &ContextLimits,
    counter: &SharedCounter,
) -> Result<RetrievedContext, RetrievalError> {
    limits.validate()?;
    let available = limits.available();
    let mut used = 0usize;
    let mut ctx = RetrievedContext::default();

    let fill = |items: &[KnowledgeItem], cap: usize, used: &mut usize| {
        let mut taken = Vec::new();
        let mut spent = 0usize;
        for item in items {
            let text = render(item);
            let tokens = counter.count(text);
            if spent + tokens <= cap {
                spent += tokens;
                taken.push(ContextEntry {
                    id: item.id.clone(),
                    kind: item.kind,
                    text: text.to_string(),
                    tokens,
                });
            }
        }
        *used += spent;
        taken
    };

    ctx.feedback = fill(&ranked.feedback, available - used, &mut used);
    let snippet_cap = limits.snippet_budget.min(available - used);
    ctx.snippets = fill(&ranked.snippets, snippet_cap, &mut used);
    ctx.web = fill(&ranked.web, available - used, &mut used);
    ctx.doc_budget = available - used;
    ctx.docs = fill(&ranked.docs, available - used, &mut used);
    ctx.total_tokens = used;
    Ok(ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counter() -> SharedCounter {
        SharedCounter::default()
    }

    fn item(id: &str, kind: KnowledgeKind, tokens: usize) -> KnowledgeItem {
        let text = "x".repeat(tokens * 4);
        let (code, error) = match kind {
            KnowledgeKind::FeedbackPair => (Some("code".to_string()), Some(text.clone())),
            KnowledgeKind::CodeSnippet => (Some(text.clone()), None),
            _ => (None, None),
        };
        KnowledgeItem {
            id: id.into(),
            kind,
            text,
            code,
            error,
            source: "t".into(),
            token_len: tokens,
        }
    }

    fn default_limits() -> ContextLimits {
        ContextLimits {
            context_limit: 4096,
            generation_reserve: 400,
            snippet_budget: 300,
        }
    }

    #[test]
    fn saturating_snippets_leave_3396_for_docs() {
        let ranked = RankedKnowledge {
            snippets: vec![
                item("s1", KnowledgeKind::CodeSnippet, 200),
                item("s2", KnowledgeKind::CodeSnippet, 100),
                item("s3", KnowledgeKind::CodeSnippet, 50),
            ],
            ..Default::default()
        };
        let ctx = assemble_context(&ranked, &default_limits(), &counter()).unwrap();
        let snippet_tokens: usize = ctx.snippets.iter().map(|e| e.tokens).sum();
        assert_eq!(snippet_tokens, 300);
        assert_eq!(ctx.doc_budget, 3396);
    }

    #[test]
    fn empty_ranking_gives_empty_context() {
        let ctx = assemble_context(&RankedKnowledge::default(), &default_limits(), &counter()).unwrap();
        assert!(ctx.is_empty());
        assert_eq!(ctx.total_tokens, 0);
    }

    #[test]
    fn greedy_skip_rule_for_docs() {
        let ranked = RankedKnowledge {
            snippets: vec![item("s", KnowledgeKind::CodeSnippet, 300)],
            docs: vec![
                item("d1", KnowledgeKind::Documentation, 2000),
                item("d2", KnowledgeKind::Documentation, 1500),
                item("d3", KnowledgeKind::Documentation, 1000),
            ],
            ..Default::default()
        };
        let ctx = assemble_context(&ranked, &default_limits(), &counter()).unwrap();
        assert_eq!(ctx.doc_budget, 3396);
        let ids: Vec<_> = ctx.docs.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["d1", "d3"]);
        assert_eq!(ctx.docs.iter().map(|e| e.tokens).sum::<usize>(), 3000);
    }

    #[test]
    fn web_alone_may_use_full_budget() {
        let ranked = RankedKnowledge {
            web: vec![item("w", KnowledgeKind::WebSearch, 3696)],
            ..Default::default()
        };
        let ctx = assemble_context(&ranked, &default_limits(), &counter()).unwrap();
        assert_eq!(ctx.web.len(), 1);
        assert_eq!(ctx.total_tokens, 3696);
    }

    #[test]
    fn feedback_contributes_error_text() {
        let mut fb = item("f", KnowledgeKind::FeedbackPair, 10);
        fb.error = Some("NameError\nLine 1: x = y".into());
        fb.text = format!("{}\n{}", fb.error.as_deref().unwrap(), "a much longer program body");
        let ranked = RankedKnowledge {
            feedback: vec![fb],
            ..Default::default()
        };
        let ctx = assemble_context(&ranked, &default_limits(), &counter()).unwrap();
        assert_eq!(ctx.feedback[0].text, "NameError\nLine 1: x = y");
    }

    #[test]
    fn invalid_limits_rejected() {
        let limits = ContextLimits {
            context_limit: 700,
            generation_reserve: 400,
            snippet_budget: 300,
        };
        assert!(matches!(
            assemble_context(&RankedKnowledge::default(), &limits, &counter()),
            Err(RetrievalError::Config(_))
        ));
    }

    fn sized(kind: KnowledgeKind, prefix: &'static str) -> impl Strategy<Value = Vec<KnowledgeItem>> {
        prop::collection::vec(0usize..2500, 0..8).prop_map(move |sizes| {
            sizes
                .into_iter()
                .enumerate()
                .map(|(i, s)| item(&format!("{prefix}{i}"), kind, s))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn never_exceeds_available(
            web in sized(KnowledgeKind::WebSearch, "w"),
            feedback in sized(KnowledgeKind::FeedbackPair, "f"),
            snippets in sized(KnowledgeKind::CodeSnippet, "s"),
            docs in sized(KnowledgeKind::Documentation, "d"),
            limit in 800usize..9000,
        ) {
            let limits = ContextLimits { context_limit: limit, generation_reserve: 400, snippet_budget: 300 };
            let ranked = RankedKnowledge { web, feedback, snippets, docs };
            let ctx = assemble_context(&ranked, &limits, &counter()).unwrap();
            let sum: usize = [&ctx.web, &ctx.feedback, &ctx.snippets, &ctx.docs]
                .iter().flat_map(|v| v.iter()).map(|e| e.tokens).sum();
            prop_assert_eq!(sum, ctx.total_tokens);
            prop_assert!(ctx.total_tokens <= limit - 400);
            prop_assert!(ctx.snippets.iter().map(|e| e.tokens).sum::<usize>() <= 300);
            let again = assemble_context(&ranked, &limits, &counter()).unwrap();
            prop_assert_eq!(again, ctx);
        }
    }
}
