//! The generate, execute, evolve loop for one problem.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::{
    aggregate, execute, feedback_message, normalize_feedback, ExecError, ExecutionFeedback,
    LanguageProfile, TestInput,
};
use crate::knowledge::{KnowledgeError, KnowledgeItem, KnowledgeKind, KnowledgeStore};
use crate::llm::{
    extract_code, fenced_blocks, ChatExchange, Gateway, GatewayError, ModelRole, PromptKind,
    PromptSet, TemplateError,
};
use crate::query::{evolve_query, initial_query, EmptyProblem};
use crate::retrieval::{
    assemble_context, ContextLimits, DenseRetriever, Query, RankedKnowledge, RetrievalError,
    RetrievedContext,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    EmptyProblem(#[from] EmptyProblem),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

/// Which parts of the loop run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One generation from the problem alone.
    Vanilla,
    /// One generation with documentation retrieved for the problem text.
    DocOnly,
    /// One generation with the whole knowledge soup, no evolution.
    NoEvolution,
    /// Query evolves; the knowledge base stays fixed.
    EvolveQueryOnly,
    /// Knowledge evolves; the query stays the problem text.
    EvolveKnowledgeOnly,
    /// Both evolve.
    Full,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Vanilla,
        Mode::DocOnly,
        Mode::NoEvolution,
        Mode::EvolveQueryOnly,
        Mode::EvolveKnowledgeOnly,
        Mode::Full,
    ];

    pub fn is_single_shot(self) -> bool {
        matches!(self, Mode::Vanilla | Mode::DocOnly | Mode::NoEvolution)
    }

    pub fn evolves_query(self) -> bool {
        matches!(self, Mode::EvolveQueryOnly | Mode::Full)
    }

    pub fn evolves_knowledge(self) -> bool {
        matches!(self, Mode::EvolveKnowledgeOnly | Mode::Full)
    }

    pub fn retrieves(self) -> bool {
        self != Mode::Vanilla
    }

    pub fn generates_tests(self) -> bool {
        !self.is_single_shot()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::DocOnly => "doc_only",
            Mode::NoEvolution => "no_evolution",
            Mode::EvolveQueryOnly => "evolve_query_only",
            Mode::EvolveKnowledgeOnly => "evolve_knowledge_only",
            Mode::Full => "full",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "vanilla" => Mode::Vanilla,
            "doc" | "doc_only" => Mode::DocOnly,
            "noevo" | "no_evolution" | "static" => Mode::NoEvolution,
            "query" | "evolve_query_only" => Mode::EvolveQueryOnly,
            "knowledge" | "evolve_knowledge_only" => Mode::EvolveKnowledgeOnly,
            "full" => Mode::Full,
            other => return Err(format!("unknown mode {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Sparse,
    Dense,
}

impl FromStr for RetrieverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sparse" | "bm25" => Ok(RetrieverKind::Sparse),
            "dense" => Ok(RetrieverKind::Dense),
            other => Err(format!("unknown retriever {other:?}")),
        }
    }
}

/// Every knob of the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub max_iterations: usize,
    pub stability_window: usize,
    pub context_limit: usize,
    pub generation_reserve: usize,
    pub snippet_budget: usize,
    /// Stop once cumulative LLM tokens exceed this.
    pub token_budget: Option<u64>,
    pub mode: Mode,
    pub retriever: RetrieverKind,
    pub seed: u64,
    /// Candidates ranked per knowledge kind before budget packing.
    pub retrieval_depth: usize,
    /// Kinds that may be retrieved and grown.
    pub knowledge_sources: BTreeSet<KnowledgeKind>,
    /// Generate test inputs after executing the first program instead of before.
    pub literal_algorithm_order: bool,
    pub dense_fallback_to_sparse: bool,
    /// Single-shot modes keep drawing fresh samples until the token budget runs out.
    pub resample_under_budget: bool,
    /// Concurrent problem runs see each other's knowledge insertions.
    pub share_knowledge: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            stability_window: 3,
            context_limit: 4096,
            generation_reserve: 400,
            snippet_budget: 300,
            token_budget: None,
            mode: Mode::Full,
            retriever: RetrieverKind::Sparse,
            seed: 0,
            retrieval_depth: 50,
            knowledge_sources: BTreeSet::from([
                KnowledgeKind::Documentation,
                KnowledgeKind::CodeSnippet,
                KnowledgeKind::FeedbackPair,
            ]),
            literal_algorithm_order: false,
            dense_fallback_to_sparse: true,
            resample_under_budget: false,
            share_knowledge: true,
        }
    }
}

impl RunConfig {
    pub fn limits(&self) -> ContextLimits {
        ContextLimits {
            context_limit: self.context_limit,
            generation_reserve: self.generation_reserve,
            snippet_budget: self.snippet_budget,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.limits()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.stability_window == 0 {
            return Err(PipelineError::Config("stability_window must be at least 1".into()));
        }
        if self.retrieval_depth == 0 {
            return Err(PipelineError::Config("retrieval_depth must be at least 1".into()));
        }
        if self.token_budget == Some(0) {
            return Err(PipelineError::Config("token_budget must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn retrieval_kinds(&self) -> Vec<KnowledgeKind> {
        match self.mode {
            Mode::Vanilla => Vec::new(),
            Mode::DocOnly => vec![KnowledgeKind::Documentation],
            _ => self.knowledge_sources.iter().copied().collect(),
        }
    }

    fn max_records(&self) -> usize {
        let resampling = self.resample_under_budget && self.token_budget.is_some();
        if self.mode.is_single_shot() && !resampling {
            1
        } else {
            self.max_iterations + 1
        }
    }

    /// Whether the runs of this configuration are independent samples
    /// rather than a refinement chain.
    pub fn samples_independently(&self) -> bool {
        self.mode.is_single_shot() && self.resample_under_budget && self.token_budget.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// The query evolver failed; the problem text was used.
    QueryEvolver,
    /// Test-input generation produced nothing usable.
    EmptyTestInputs,
    /// Dense retrieval failed; BM25 was used.
    DenseRetrieval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeUsage {
    pub role: ModelRole,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub attempts: u32,
}

impl From<&ChatExchange> for ExchangeUsage {
    fn from(ex: &ChatExchange) -> Self {
        Self {
            role: ex.role,
            prompt_tokens: ex.prompt_tokens,
            completion_tokens: ex.completion_tokens,
            attempts: ex.attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub i: usize,
    pub query: Query,
    pub context: RetrievedContext,
    pub program: String,
    pub feedback: ExecutionFeedback,
    pub tokens_this_iter: u64,
    pub kb_generation_after: u64,
    /// Knowledge item added this iteration, if any.
    pub kb_insert: Option<String>,
    pub fallback_flags: BTreeSet<Fallback>,
    pub exchanges: Vec<ExchangeUsage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Success,
    StableFeedback,
    MaxIterations,
    TokenBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub problem_id: String,
    pub mode: Mode,
    pub config_hash: String,
    pub template_hash: String,
    pub test_inputs: Vec<TestInput>,
    pub records: Vec<IterationRecord>,
    pub final_program: String,
    pub termination: Termination,
    pub total_tokens: u64,
}

impl RunTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedInputs {
    pub inputs: Vec<TestInput>,
    pub exchange: Option<ChatExchange>,
}

/// Asks the test generator for test cases and keeps only their inputs.
pub fn generate_test_inputs(
    gateway: &Gateway,
    prompts: &PromptSet,
    problem: &str,
    program: &str,
) -> Result<GeneratedInputs, TemplateError> {
    let prompt = prompts.render(&PromptKind::GenerateTestInputs { problem, program })?;
    let exchange = match gateway.complete(ModelRole::TestGenerator, &prompt) {
        Ok(ex) => ex,
        Err(e) => {
            warn!("test input generation failed: {e}");
            return Ok(GeneratedInputs {
                inputs: Vec::new(),
                exchange: None,
            });
        }
    };
    Ok(GeneratedInputs {
        inputs: parse_test_inputs(&exchange.completion),
        exchange: Some(exchange),
    })
}

/// Bodies of fenced blocks tagged `input`; expected outputs are dropped.
pub fn parse_test_inputs(completion: &str) -> Vec<TestInput> {
    fenced_blocks(completion)
        .into_iter()
        .filter(|b| b.info.eq_ignore_ascii_case("input"))
        .map(|b| {
            let mut body = b.body;
            body.push('\n');
            TestInput::new(body)
        })
        .collect()
}

/// Everything a run needs besides the problem, store and config.
pub struct Engine {
    pub gateway: Arc<Gateway>,
    pub prompts: PromptSet,
    pub dense: Option<Arc<DenseRetriever>>,
}

impl Engine {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            prompts: PromptSet::builtin(),
            dense: None,
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_dense(mut self, dense: Arc<DenseRetriever>) -> Self {
        self.dense = Some(dense);
        self
    }

    /// Runs the loop for one problem.
    ///
    /// Program failures are data and never abort the run; missing
    /// toolchains and unreachable generator endpoints do.
    pub fn solve(
        &self,
        problem_id: &str,
        description: &str,
        profile: &LanguageProfile,
        store: &KnowledgeStore,
        cfg: &RunConfig,
    ) -> Result<RunTrace, PipelineError> {
        cfg.validate()?;
        profile.validate()?;
        if cfg.retriever == RetrieverKind::Dense && self.dense.is_none() && cfg.mode.retrieves() {
            return Err(PipelineError::Config("dense retriever selected but no embedding client configured".into()));
        }
        let warmup = initial_query(description)?;
        let mode = cfg.mode;
        let max_records = cfg.max_records();
        let kinds = cfg.retrieval_kinds();

        let mut inputs: Vec<TestInput> = Vec::new();
        let mut records: Vec<IterationRecord> = Vec::new();
        let mut normalized: Vec<String> = Vec::new();
        let mut total_tokens = 0u64;

        let termination = loop {
            let i = records.len();
            let mut exchanges: Vec<ChatExchange> = Vec::new();
            let mut flags = BTreeSet::new();

            let query = match records.last() {
                Some(prev) if mode.evolves_query() => {
                    let prev_error = feedback_message(&prev.feedback, &prev.program);
                    let evolved = evolve_query(
                        &self.gateway,
                        &self.prompts,
                        description,
                        &prev.program,
                        &inputs,
                        &prev_error,
                        i,
                    );
                    exchanges.extend(evolved.exchange);
                    if evolved.fallback {
                        flags.insert(Fallback::QueryEvolver);
                    }
                    evolved.query
                }
                _ => Query {
                    text: warmup.text.clone(),
                    iteration: i,
                },
            };

            let context = if mode.retrieves() {
                self.retrieve(store, &query, &kinds, cfg, &mut flags)?
            } else {
                RetrievedContext::default()
            };

            let prompt = self.prompts.render(&PromptKind::Generate {
                problem: description,
                context: &context,
            })?;
            let generation = self.gateway.complete(ModelRole::Generator, &prompt)?;
            let program = extract_code(&generation.completion);
            exchanges.push(generation);

            let wants_inputs = i == 0 && mode.generates_tests();
            if wants_inputs && !cfg.literal_algorithm_order {
                self.fill_inputs(description, &program, &mut inputs, &mut exchanges, &mut flags)?;
            }

            let feedbacks = execute(&program, &inputs, profile)?;
            let feedback = aggregate(&feedbacks)?;

            let mut kb_insert = None;
            if mode.evolves_knowledge() {
                let insertion = if feedback.is_success() {
                    cfg.knowledge_sources
                        .contains(&KnowledgeKind::CodeSnippet)
                        .then(|| store.add_verified_snippet(&program, problem_id))
                } else if cfg.knowledge_sources.contains(&KnowledgeKind::FeedbackPair) {
                    Some(store.add_feedback_pair(&program, &feedback_message(&feedback, &program))?)
                } else {
                    None
                };
                kb_insert = insertion.filter(|ins| ins.created).map(|ins| ins.item.id);
            }

            if wants_inputs && cfg.literal_algorithm_order {
                self.fill_inputs(description, &program, &mut inputs, &mut exchanges, &mut flags)?;
            }

            let tokens: u64 = exchanges.iter().map(|e| e.total_tokens() as u64).sum();
            total_tokens += tokens;
            normalized.push(normalize_feedback(&feedback));
            let success = feedback.is_success();
            debug!("{problem_id} iteration {i}: {:?}, {tokens} tokens", feedback.status);
            records.push(IterationRecord {
                i,
                query,
                context,
                program,
                feedback,
                tokens_this_iter: tokens,
                kb_generation_after: store.generation(),
                kb_insert,
                fallback_flags: flags,
                exchanges: exchanges.iter().map(ExchangeUsage::from).collect(),
            });

            if success {
                break Termination::Success;
            }
            if !mode.is_single_shot() && is_stable(&normalized, cfg.stability_window) {
                break Termination::StableFeedback;
            }
            if cfg.token_budget.is_some_and(|budget| total_tokens > budget) {
                break Termination::TokenBudget;
            }
            if records.len() >= max_records {
                break Termination::MaxIterations;
            }
        };

        info!(
            "{problem_id} [{mode}]: {termination:?} after {} iteration(s), {total_tokens} tokens",
            records.len()
        );
        let final_program = records.last().map(|r| r.program.clone()).unwrap_or_default();
        Ok(RunTrace {
            problem_id: problem_id.to_string(),
            mode,
            config_hash: cfg.hash(),
            template_hash: self.prompts.hash(),
            test_inputs: inputs,
            records,
            final_program,
            termination,
            total_tokens,
        })
    }

    fn fill_inputs(
        &self,
        description: &str,
        program: &str,
        inputs: &mut Vec<TestInput>,
        exchanges: &mut Vec<ChatExchange>,
        flags: &mut BTreeSet<Fallback>,
    ) -> Result<(), PipelineError> {
        let generated = generate_test_inputs(&self.gateway, &self.prompts, description, program)?;
        exchanges.extend(generated.exchange);
        if generated.inputs.is_empty() {
            flags.insert(Fallback::EmptyTestInputs);
        }
        *inputs = generated.inputs;
        Ok(())
    }

    fn retrieve(
        &self,
        store: &KnowledgeStore,
        query: &Query,
        kinds: &[KnowledgeKind],
        cfg: &RunConfig,
        flags: &mut BTreeSet<Fallback>,
    ) -> Result<RetrievedContext, PipelineError> {
        let mut ranked = RankedKnowledge::default();
        for &kind in kinds {
            let items = self.rank_kind(store, query, kind, cfg, flags)?;
            match kind {
                KnowledgeKind::Documentation => ranked.docs = items,
                KnowledgeKind::WebSearch => ranked.web = items,
                KnowledgeKind::CodeSnippet => ranked.snippets = items,
                KnowledgeKind::FeedbackPair => ranked.feedback = items,
            }
        }
        Ok(assemble_context(&ranked, &cfg.limits(), self.gateway.counter())?)
    }

    fn rank_kind(
        &self,
        store: &KnowledgeStore,
        query: &Query,
        kind: KnowledgeKind,
        cfg: &RunConfig,
        flags: &mut BTreeSet<Fallback>,
    ) -> Result<Vec<KnowledgeItem>, PipelineError> {
        let sparse = || {
            store
                .retrieve_sparse(kind, &query.text, cfg.retrieval_depth)
                .into_iter()
                .map(|(item, _)| item)
                .collect()
        };
        let (RetrieverKind::Dense, Some(dense)) = (cfg.retriever, &self.dense) else {
            return Ok(sparse());
        };
        let items = store.items_of_kind(kind);
        match dense.retrieve(&items, query, cfg.retrieval_depth) {
            Ok(scored) => Ok(scored
                .into_iter()
                .filter_map(|s| items.iter().find(|it| it.id == s.item_id).cloned())
                .collect()),
            Err(e) if cfg.dense_fallback_to_sparse => {
                warn!("dense retrieval failed, using BM25: {e}");
                flags.insert(Fallback::DenseRetrieval);
                Ok(sparse())
            }
            Err(e) => Err(RetrievalError::from(e).into()),
        }
    }
}

/// The last `window` normalized feedbacks are identical.
fn is_stable(normalized: &[String], window: usize) -> bool {
    normalized.len() >= window && {
        let tail = &normalized[normalized.len() - window..];
        tail.iter().all(|s| s == &tail[0])
    }
}
