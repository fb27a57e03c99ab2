//! Datasets in, execution accuracy out.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{execute, outputs_match, ExecError, LanguageProfile, TestInput};
use crate::knowledge::{KnowledgeError, KnowledgeStore};
use crate::pipeline::{Engine, Mode, RunConfig, RunTrace, Termination};

/// Token thresholds for pass@t.
pub const DEFAULT_TOKEN_THRESHOLDS: [u64; 6] = [4000, 8000, 12000, 16000, 20000, 24000];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read dataset {path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate problem id {0}")]
    DuplicateProblem(String),
    #[error("gold programs fail their tests: {0:?}")]
    GoldFails(Vec<String>),
    #[error("thresholds must be strictly increasing: {0:?}")]
    Thresholds(Vec<u64>),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected: String,
}

/// One benchmark problem, stored as a JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub description: String,
    /// Name of the language profile that runs its programs.
    pub profile: String,
    #[serde(default)]
    pub tests: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_program: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_doc_ids: Option<Vec<String>>,
    /// Column label in summary tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

impl Problem {
    pub fn dataset_label(&self) -> &str {
        self.dataset.as_deref().unwrap_or("all")
    }
}

pub type Profiles = BTreeMap<String, LanguageProfile>;

pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<Problem>, EvalError> {
    let mut problems = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let problem: Problem = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(problem.id.clone()) {
            return Err(EvalError::DuplicateProblem(problem.id));
        }
        problems.push(problem);
    }
    Ok(problems)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Problem>, EvalError> {
    let file = std::fs::File::open(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_dataset(std::io::BufReader::new(file))
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("problem has no tests")]
    NoTests,
    #[error("unknown language profile {0:?}")]
    UnknownProfile(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Runs `program` on every test; passes iff every run succeeds and its
/// output matches the expected output.
pub fn score(problem: &Problem, program: &str, profile: &LanguageProfile) -> Result<bool, ScoreError> {
    if problem.tests.is_empty() {
        return Err(ScoreError::NoTests);
    }
    let inputs: Vec<TestInput> = problem.tests.iter().map(|t| TestInput::new(t.input.clone())).collect();
    let runs = execute(program, &inputs, profile)?;
    Ok(runs.len() == problem.tests.len()
        && runs
            .iter()
            .zip(&problem.tests)
            .all(|(run, test)| run.is_success() && outputs_match(&run.stdout, &test.expected)))
}

fn resolve<'p>(profiles: &'p Profiles, problem: &Problem) -> Result<&'p LanguageProfile, ScoreError> {
    profiles
        .get(&problem.profile)
        .ok_or_else(|| ScoreError::UnknownProfile(problem.profile.clone()))
}

/// Checks every gold program against its tests.
pub fn validate_gold(problems: &[Problem], profiles: &Profiles) -> Result<(), EvalError> {
    let failing: Vec<String> = problems
        .iter()
        .filter(|p| p.gold_program.is_some())
        .filter(|p| {
            let gold = p.gold_program.as_deref().unwrap_or_default();
            !matches!(resolve(profiles, p).and_then(|prof| score(p, gold, prof)), Ok(true))
        })
        .map(|p| p.id.clone())
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(EvalError::GoldFails(failing))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub id: String,
    pub dataset: String,
    pub mode: Mode,
    pub passed: bool,
    /// False when the problem could not be scored (missing toolchain,
    /// unreachable endpoint, no tests); such problems do not count.
    pub scored: bool,
    pub iterations: usize,
    pub total_tokens: u64,
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub scored: usize,
    pub passed: usize,
    pub unscored: usize,
    /// Percent, rounded to one decimal.
    pub pass_at_1: f64,
    pub avg_tokens: f64,
    pub per_dataset: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pass_at_t: BTreeMap<u64, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub template_hash: String,
    pub per_problem: Vec<ProblemResult>,
    pub aggregates: Vec<ModeSummary>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per mode, one column per dataset plus the average of the
    /// dataset columns and the mean token cost.
    pub fn to_markdown(&self) -> String {
        let datasets: Vec<String> = {
            let mut d: Vec<String> = self
                .aggregates
                .iter()
                .flat_map(|m| m.per_dataset.keys().cloned())
                .collect();
            d.sort();
            d.dedup();
            d
        };
        let mut out = String::from("| Mode |");
        for d in &datasets {
            out.push_str(&format!(" {d} |"));
        }
        out.push_str(" Average | Tokens |\n|---|");
        out.push_str(&"---|".repeat(datasets.len() + 2));
        out.push('\n');
        for m in &self.aggregates {
            out.push_str(&format!("| {} |", m.mode));
            let mut cols = Vec::new();
            for d in &datasets {
                match m.per_dataset.get(d) {
                    Some(v) => {
                        cols.push(*v);
                        out.push_str(&format!(" {v:.1} |"));
                    }
                    None => out.push_str(" - |"),
                }
            }
            let avg = if cols.is_empty() { 0.0 } else { cols.iter().sum::<f64>() / cols.len() as f64 };
            out.push_str(&format!(" {avg:.1} | {:.0} |\n", m.avg_tokens));
        }
        let with_t: Vec<&ModeSummary> = self.aggregates.iter().filter(|m| !m.pass_at_t.is_empty()).collect();
        if let Some(first) = with_t.first() {
            out.push_str("\n| Mode |");
            for t in first.pass_at_t.keys() {
                out.push_str(&format!(" pass@{t} |"));
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(first.pass_at_t.len()));
            out.push('\n');
            for m in with_t {
                out.push_str(&format!("| {} |", m.mode));
                for v in m.pass_at_t.values() {
                    out.push_str(&format!(" {v:.1} |"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Percentage rounded to one decimal place.
pub fn percent(passed: usize, scored: usize) -> f64 {
    if scored == 0 {
        return 0.0;
    }
    // Integer rounding of 1000 * passed / scored, half up.
    let tenths = (2000 * passed + scored) / (2 * scored);
    tenths as f64 / 10.0
}

pub struct BenchmarkOutput {
    pub report: Report,
    pub traces: Vec<RunTrace>,
}

/// Sweeps modes over a dataset.
pub struct Benchmark<'a> {
    pub engine: &'a Engine,
    pub profiles: &'a Profiles,
    /// Problems solved concurrently within a mode.
    pub workers: usize,
}

struct Outcome {
    result: ProblemResult,
    trace: Option<RunTrace>,
}

impl Benchmark<'_> {
    /// Every mode starts from its own copy of `base`, so evolution never
    /// leaks between modes. Modes run one after another.
    pub fn run(
        &self,
        problems: &[Problem],
        base: &KnowledgeStore,
        cfg: &RunConfig,
        modes: &[Mode],
    ) -> Result<BenchmarkOutput, EvalError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?;
        let mut per_problem = Vec::new();
        let mut traces = Vec::new();
        let mut aggregates = Vec::new();
        for &mode in modes {
            let mode_cfg = RunConfig { mode, ..cfg.clone() };
            let store = base.fork()?;
            let outcomes: Vec<Outcome> = if self.workers <= 1 {
                problems.iter().map(|p| self.run_one(p, &store, &mode_cfg)).collect()
            } else {
                pool.install(|| problems.par_iter().map(|p| self.run_one(p, &store, &mode_cfg)).collect())
            };
            let results: Vec<ProblemResult> = outcomes.iter().map(|o| o.result.clone()).collect();
            aggregates.push(summarize(mode, &results));
            per_problem.extend(results);
            traces.extend(outcomes.into_iter().filter_map(|o| o.trace));
        }
        Ok(BenchmarkOutput {
            report: Report {
                config_hash: cfg.hash(),
                template_hash: self.engine.prompts.hash(),
                per_problem,
                aggregates,
            },
            traces,
        })
    }

    fn run_one(&self, problem: &Problem, mode_store: &KnowledgeStore, cfg: &RunConfig) -> Outcome {
        let mut result = ProblemResult {
            id: problem.id.clone(),
            dataset: problem.dataset_label().to_string(),
            mode: cfg.mode,
            passed: false,
            scored: false,
            iterations: 0,
            total_tokens: 0,
            termination: None,
            error: None,
        };
        let unscored = |mut result: ProblemResult, msg: String| {
            warn!("{} [{}] unscored: {msg}", result.id, result.mode);
            result.error = Some(msg);
            Outcome { result, trace: None }
        };
        if problem.tests.is_empty() {
            return unscored(result, ScoreError::NoTests.to_string());
        }
        let profile = match resolve(self.profiles, problem) {
            Ok(p) => p,
            Err(e) => return unscored(result, e.to_string()),
        };
        let isolated;
        let store = if cfg.share_knowledge {
            mode_store
        } else {
            match mode_store.fork() {
                Ok(s) => {
                    isolated = s;
                    &isolated
                }
                Err(e) => return unscored(result, e.to_string()),
            }
        };
        let trace = match self.engine.solve(&problem.id, &problem.description, profile, store, cfg) {
            Ok(t) => t,
            Err(e) => return unscored(result, e.to_string()),
        };
        result.iterations = trace.records.len();
        result.total_tokens = trace.total_tokens;
        result.termination = Some(trace.termination);

        let candidates: Vec<&str> = if cfg.samples_independently() {
            trace.records.iter().map(|r| r.program.as_str()).collect()
        } else {
            vec![trace.final_program.as_str()]
        };
        let mut passed = false;
        for program in candidates {
            match score(problem, program, profile) {
                Ok(true) => {
                    passed = true;
                    break;
                }
                Ok(false) => {}
                Err(e) => {
                    let mut out = unscored(result, e.to_string());
                    out.trace = Some(trace);
                    return out;
                }
            }
        }
        result.passed = passed;
        result.scored = true;
        Outcome {
            result,
            trace: Some(trace),
        }
    }

    /// pass@t: for each threshold, the pass rate of each mode when runs stop
    /// once their cumulative token use exceeds it. Values are reported as
    /// measured, with no monotonicity imposed.
    pub fn pass_at_t(
        &self,
        problems: &[Problem],
        base: &KnowledgeStore,
        cfg: &RunConfig,
        modes: &[Mode],
        thresholds: &[u64],
    ) -> Result<BTreeMap<Mode, BTreeMap<u64, f64>>, EvalError> {
        if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) || thresholds[0] == 0 {
            return Err(EvalError::Thresholds(thresholds.to_vec()));
        }
        let mut out: BTreeMap<Mode, BTreeMap<u64, f64>> = BTreeMap::new();
        for &t in thresholds {
            let budget_cfg = RunConfig {
                token_budget: Some(t),
                ..cfg.clone()
            };
            let run = self.run(problems, base, &budget_cfg, modes)?;
            for summary in run.report.aggregates {
                out.entry(summary.mode).or_default().insert(t, summary.pass_at_1);
            }
        }
        Ok(out)
    }
}

fn summarize(mode: Mode, results: &[ProblemResult]) -> ModeSummary {
    let scored: Vec<&ProblemResult> = results.iter().filter(|r| r.scored).collect();
    let passed = scored.iter().filter(|r| r.passed).count();
    let mut by_dataset: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in &scored {
        let e = by_dataset.entry(r.dataset.clone()).or_default();
        e.0 += usize::from(r.passed);
        e.1 += 1;
    }
    let avg_tokens = if scored.is_empty() {
        0.0
    } else {
        let sum: u64 = scored.iter().map(|r| r.total_tokens).sum();
        (sum as f64 / scored.len() as f64 * 10.0).round() / 10.0
    };
    ModeSummary {
        mode,
        scored: scored.len(),
        passed,
        unscored: results.len() - scored.len(),
        pass_at_1: percent(passed, scored.len()),
        avg_tokens,
        per_dataset: by_dataset
            .into_iter()
            .map(|(d, (p, s))| (d, percent(p, s)))
            .collect(),
        pass_at_t: BTreeMap::new(),
    }
}
