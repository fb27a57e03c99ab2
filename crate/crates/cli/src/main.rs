use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use evocode::config::FileConfig;
use evocode::corpus::{mutate_inputs, seed_snippets};
use evocode::evaluation::{load_dataset, score, validate_gold, Benchmark, DEFAULT_TOKEN_THRESHOLDS};
use evocode::executor::TestInput;
use evocode::knowledge::{KnowledgeBase, KnowledgeKind, KnowledgeStore, UrlListFetcher, DEFAULT_CHUNK_TOKENS};
use evocode::pipeline::{Mode, RetrieverKind, RunConfig};
use evocode::tokens::SharedCounter;

#[derive(Parser)]
#[command(name = "evocode", version, about = "Retrieval-augmented code generation with evolving queries and knowledge")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or extend a knowledge store from documentation files and web pages.
    Ingest(IngestArgs),
    /// Solve one problem and print its trace.
    Solve(SolveArgs),
    /// Run modes over a dataset and write a report.
    Bench(BenchArgs),
    /// Draft and run a usage script per documentation item.
    SeedSnippets(SeedArgs),
    /// Extend test inputs by type-aware mutation.
    Mutate(MutateArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of .md/.txt/.rst files.
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Pages to fetch as web knowledge.
    #[arg(long, value_delimiter = ',')]
    urls: Vec<String>,
    /// Store file to create or extend.
    #[arg(long)]
    kb: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CHUNK_TOKENS)]
    chunk_tokens: usize,
}

#[derive(Args)]
struct RunOverrides {
    /// TOML file with endpoints, profiles and run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    token_budget: Option<u64>,
    /// sparse or dense
    #[arg(long)]
    retriever: Option<RetrieverKind>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: String,
    #[arg(long)]
    dataset: PathBuf,
    /// Store file, or a documentation directory to ingest first.
    #[arg(long)]
    kb: PathBuf,
    #[arg(long, default_value = "full")]
    mode: Mode,
    #[command(flatten)]
    run: RunOverrides,
    /// Write the trace here instead of standard output.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Save the evolved knowledge store here.
    #[arg(long)]
    save_kb: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Store file, or a documentation directory to ingest first.
    #[arg(long)]
    kb: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "vanilla,doc_only,full")]
    modes: Vec<Mode>,
    /// Report JSON path; a markdown table is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Check every gold program against its tests first.
    #[arg(long)]
    validate: bool,
    /// Token thresholds for pass@t; without values, the default list.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pass_at_t: Option<Vec<u64>>,
    /// Let single-shot modes draw fresh samples until the token budget is spent.
    #[arg(long)]
    resample: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Write all traces here as JSON lines.
    #[arg(long)]
    traces_out: Option<PathBuf>,
    #[command(flatten)]
    run: RunOverrides,
}

#[derive(Args)]
struct SeedArgs {
    /// Store file, updated in place.
    #[arg(long)]
    kb: PathBuf,
    /// Language profile used to run the scripts.
    #[arg(long)]
    profile: String,
    /// Language name used in prompts; defaults to the profile name.
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MutateArgs {
    /// Inputs separated by lines of `---`, or one input per line.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::SeedSnippets(a) => seed(a),
        Command::Mutate(a) => mutate(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let mut cfg = FileConfig::load(path)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, o: &RunOverrides) {
    if let Some(m) = o.max_iterations {
        cfg.max_iterations = m;
    }
    if let Some(t) = o.token_budget {
        cfg.token_budget = Some(t);
    }
    if let Some(r) = o.retriever {
        cfg.retriever = r;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
}

/// A directory is ingested as documentation; anything else is read as a
/// store file.
fn open_kb(path: &Path, counter: &SharedCounter) -> Result<KnowledgeStore> {
    if path.is_dir() {
        let mut kb = KnowledgeBase::new(counter.clone());
        let n = kb.ingest_documentation(path, DEFAULT_CHUNK_TOKENS)?;
        info!("ingested {n} documentation chunks from {}", path.display());
        Ok(KnowledgeStore::new(kb)?)
    } else {
        KnowledgeStore::load(path, counter.clone()).with_context(|| format!("loading {}", path.display()))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ingest(a: IngestArgs) -> Result<()> {
    if a.docs.is_none() && a.urls.is_empty() {
        bail!("nothing to ingest: give --docs and/or --urls");
    }
    let counter = SharedCounter::default();
    let mut kb = if a.kb.exists() {
        KnowledgeBase::load(&a.kb, counter)?
    } else {
        KnowledgeBase::new(counter)
    };
    if let Some(dir) = &a.docs {
        let n = kb.ingest_documentation(dir, a.chunk_tokens)?;
        println!("documentation: {n} new items");
    }
    if !a.urls.is_empty() {
        let fetcher = UrlListFetcher::new(a.urls.clone());
        let n = kb.ingest_web("", a.urls.len(), &fetcher, a.chunk_tokens);
        println!("web: {n} new items");
    }
    kb.save(&a.kb)?;
    for kind in KnowledgeKind::ALL {
        println!("{kind:?}: {}", kb.count_of_kind(kind));
    }
    Ok(())
}

fn solve(a: SolveArgs) -> Result<()> {
    let fc = load_config(a.run.config.as_deref())?;
    let mut cfg = fc.run.clone();
    cfg.mode = a.mode;
    apply_overrides(&mut cfg, &a.run);
    let problems = load_dataset(&a.dataset)?;
    let problem = problems
        .iter()
        .find(|p| p.id == a.problem)
        .ok_or_else(|| anyhow!("no problem {:?} in {}", a.problem, a.dataset.display()))?;
    let profiles = fc.profiles()?;
    let profile = profiles
        .get(&problem.profile)
        .ok_or_else(|| anyhow!("unknown language profile {:?}", problem.profile))?;
    let counter = SharedCounter::default();
    let store = open_kb(&a.kb, &counter)?;
    let engine = fc.engine(counter)?;

    let trace = engine.solve(&problem.id, &problem.description, profile, &store, &cfg)?;
    match &a.trace_out {
        Some(path) => write_file(path, &trace.to_json())?,
        None => println!("{}", trace.to_json()),
    }
    let verdict = if problem.tests.is_empty() {
        "unscored".to_string()
    } else {
        match score(problem, &trace.final_program, profile) {
            Ok(true) => "passed".into(),
            Ok(false) => "failed".into(),
            Err(e) => format!("unscored ({e})"),
        }
    };
    eprintln!(
        "{}: {:?} after {} iteration(s), {} tokens, {verdict}",
        problem.id,
        trace.termination,
        trace.records.len(),
        trace.total_tokens
    );
    if let Some(path) = &a.save_kb {
        store.save(path)?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let fc = load_config(a.run.config.as_deref())?;
    let mut cfg = fc.run.clone();
    apply_overrides(&mut cfg, &a.run);
    if a.resample {
        cfg.resample_under_budget = true;
    }
    let problems = load_dataset(&a.dataset)?;
    let profiles = fc.profiles()?;
    if a.validate {
        validate_gold(&problems, &profiles)?;
        info!("gold programs pass for all {} problems", problems.len());
    }
    let counter = SharedCounter::default();
    let store = open_kb(&a.kb, &counter)?;
    let engine = fc.engine(counter)?;
    let bench = Benchmark {
        engine: &engine,
        profiles: &profiles,
        workers: a.workers.unwrap_or(fc.workers),
    };

    let mut out = bench.run(&problems, &store, &cfg, &a.modes)?;
    if let Some(thresholds) = &a.pass_at_t {
        let thresholds = if thresholds.is_empty() {
            DEFAULT_TOKEN_THRESHOLDS.to_vec()
        } else {
            thresholds.clone()
        };
        let rates = bench.pass_at_t(&problems, &store, &cfg, &a.modes, &thresholds)?;
        for summary in &mut out.report.aggregates {
            if let Some(r) = rates.get(&summary.mode) {
                summary.pass_at_t = r.clone();
            }
        }
    }

    write_file(&a.out, &out.report.to_json())?;
    let markdown = out.report.to_markdown();
    write_file(&a.out.with_extension("md"), &markdown)?;
    if let Some(path) = &a.traces_out {
        let mut text = String::new();
        for t in &out.traces {
            text.push_str(&serde_json::to_string(t)?);
            text.push('\n');
        }
        write_file(path, &text)?;
    }
    print!("{markdown}");
    Ok(())
}

fn seed(a: SeedArgs) -> Result<()> {
    let fc = load_config(a.config.as_deref())?;
    let profiles = fc.profiles()?;
    let profile = profiles
        .get(&a.profile)
        .ok_or_else(|| anyhow!("unknown language profile {:?}", a.profile))?;
    let counter = SharedCounter::default();
    let store = KnowledgeStore::load(&a.kb, counter.clone())?;
    let engine = fc.engine(counter)?;
    let language = a.language.or_else(|| fc.language.clone()).unwrap_or_else(|| a.profile.clone());
    let docs = store.items_of_kind(KnowledgeKind::Documentation);
    let counts = seed_snippets(&store, &docs, profile, &engine.gateway, &engine.prompts, &language);
    store.save(&a.kb)?;
    println!("{}", serde_json::to_string(&counts)?);
    Ok(())
}

const SEPARATOR: &str = "---";

fn parse_inputs(text: &str) -> (Vec<TestInput>, bool) {
    let blocked = text.lines().any(|l| l.trim_end() == SEPARATOR);
    if !blocked {
        return (text.lines().map(TestInput::new).collect(), false);
    }
    let mut inputs = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim_end() == SEPARATOR {
            inputs.push(TestInput::new(std::mem::take(&mut current)));
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.is_empty() {
        inputs.push(TestInput::new(current));
    }
    (inputs, true)
}

fn mutate(a: MutateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (inputs, blocked) = parse_inputs(&text);
    let out = mutate_inputs(&inputs, a.target, a.seed)?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for (n, input) in out.iter().enumerate() {
        if blocked {
            if n > 0 {
                writeln!(w, "{SEPARATOR}")?;
            }
            write!(w, "{}", input.as_str())?;
            if !input.as_str().ends_with('\n') {
                writeln!(w)?;
            }
        } else {
            writeln!(w, "{}", input.as_str())?;
        }
    }
    Ok(())
}
