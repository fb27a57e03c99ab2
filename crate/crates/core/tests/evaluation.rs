mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use common::*;
use evocode::corpus::{mutate_inputs, seed_snippets, validate_inputs, CorpusError, SeedCounts};
use evocode::evaluation::{load_dataset, validate_gold, Benchmark, EvalError, Problem, TestCase};
use evocode::executor::TestInput;
use evocode::knowledge::KnowledgeKind;
use evocode::llm::ModelRole;
use evocode::pipeline::{Mode, RunConfig};

fn bench_run(solved: usize, problems: &[Problem], cfg: &RunConfig, modes: &[Mode]) -> evocode::evaluation::BenchmarkOutput {
    let engine = fn_engine(toy_generator(solved));
    let profiles = profiles();
    let bench = Benchmark {
        engine: &engine,
        profiles: &profiles,
        workers: 1,
    };
    bench.run(problems, &doc_store(&sample_docs()), cfg, modes).unwrap()
}

#[test]
fn unscorable_problems_are_excluded() {
    let mut problems = toy_dataset();
    problems[8].profile = "cobol".into();
    problems[9].tests.clear();
    let out = bench_run(6, &problems, &RunConfig::default(), &[Mode::Full]);
    let m = &out.report.aggregates[0];
    assert_eq!((m.scored, m.unscored, m.passed), (8, 2, 6));
    assert_eq!(m.pass_at_1, 75.0);
    let bad = out.report.per_problem.iter().find(|r| r.id == "toy-8").unwrap();
    assert!(!bad.scored);
    assert!(bad.error.as_deref().unwrap().contains("cobol"));
    assert_eq!(out.traces.len(), 8);
}

#[test]
fn report_is_ordered_by_mode_then_problem() {
    let problems = toy_dataset();
    let out = bench_run(3, &problems, &RunConfig::default(), &[Mode::Vanilla, Mode::Full]);
    assert_eq!(out.report.per_problem.len(), 20);
    assert!(out.report.per_problem[..10].iter().all(|r| r.mode == Mode::Vanilla));
    assert_eq!(out.report.per_problem[10].id, "toy-0");
    assert_eq!(out.report.aggregates[0].pass_at_1, 30.0);
    let md = out.report.to_markdown();
    assert!(md.contains("| Mode | Even | Odd | Average | Tokens |"));
    assert!(md.contains("| vanilla | 40.0 | 20.0 | 30.0 |"));
}

#[test]
fn modes_do_not_share_evolved_knowledge() {
    let problems = toy_dataset();
    let engine = fn_engine(toy_generator(10));
    let profiles = profiles();
    let bench = Benchmark {
        engine: &engine,
        profiles: &profiles,
        workers: 1,
    };
    let base = doc_store(&sample_docs());
    let before = base.generation();
    let out = bench.run(&problems, &base, &RunConfig::default(), &[Mode::Full, Mode::Full]).unwrap();
    assert_eq!(base.generation(), before);
    let a = &out.traces[..10];
    let b = &out.traces[10..];
    assert_eq!(serde_json::to_string(a).unwrap(), serde_json::to_string(b).unwrap());
}

#[test]
fn threshold_lists_must_increase() {
    let engine = fn_engine(toy_generator(1));
    let profiles = profiles();
    let bench = Benchmark {
        engine: &engine,
        profiles: &profiles,
        workers: 1,
    };
    let store = doc_store(&[]);
    for bad in [vec![], vec![8000, 4000], vec![4000, 4000], vec![0, 10]] {
        let err = bench.pass_at_t(&toy_dataset(), &store, &RunConfig::default(), &[Mode::Full], &bad);
        assert!(matches!(err, Err(EvalError::Thresholds(_))), "{bad:?}");
    }
}

#[test]
fn tight_budgets_lower_pass_at_t_for_resampled_baselines() {
    // The generator gets problem k right only on its (k+1)-th call for that
    // problem, so more samples solve more problems.
    let calls: Vec<AtomicUsize> = (0..10).map(|_| AtomicUsize::new(0)).collect();
    let engine = fn_engine(move |role, req| {
        let prompt = prompt_of(req);
        let k: usize = prompt
            .rsplit("answer-")
            .next()
            .and_then(|r| r.split(|c: char| !c.is_ascii_digit()).next())
            .and_then(|d| d.parse().ok())
            .unwrap_or(0);
        match role {
            ModelRole::Generator => {
                let n = calls[k].fetch_add(1, Ordering::SeqCst);
                let body = if n >= k { format!("echo answer-{k}") } else { format!("echo draft-{n} >&2; exit 1") };
                reply_usage(fenced(&body), 900, 100)
            }
            _ => reply("unused"),
        }
    });
    let problems: Vec<Problem> = toy_dataset()
        .into_iter()
        .map(|p| Problem {
            profile: "sh".into(),
            ..p
        })
        .collect();
    let profiles = profiles();
    let bench = Benchmark {
        engine: &engine,
        profiles: &profiles,
        workers: 1,
    };
    let cfg = RunConfig {
        resample_under_budget: true,
        ..RunConfig::default()
    };
    let rates = bench
        .pass_at_t(&problems, &doc_store(&[]), &cfg, &[Mode::Vanilla], &[1000, 2000, 4000])
        .unwrap();
    let v = &rates[&Mode::Vanilla];
    // Budget t allows floor(t/1000)+1 samples; calls accumulate across
    // thresholds because the counters are shared.
    assert_eq!(v[&1000], 20.0);
    assert!(v[&2000] > v[&1000]);
    assert!(v[&4000] > v[&2000]);
}

#[test]
fn dataset_file_and_gold_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.jsonl");
    let mut problems = toy_dataset();
    let lines: Vec<String> = problems.iter().map(|p| serde_json::to_string(p).unwrap()).collect();
    std::fs::write(&path, lines.join("\n")).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), problems);
    validate_gold(&problems, &profiles()).unwrap();

    problems[3].gold_program = Some("answer-4\n".into());
    problems[5].tests.push(TestCase {
        input: String::new(),
        expected: "something else".into(),
    });
    match validate_gold(&problems, &profiles()) {
        Err(EvalError::GoldFails(ids)) => assert_eq!(ids, ["toy-3", "toy-5"]),
        other => panic!("unexpected {other:?}"),
    }
    assert!(load_dataset(&dir.path().join("absent.jsonl")).is_err());
}

#[test]
fn seeding_from_documentation() {
    let docs = ["ring_push appends", "ring_pop removes", "ring_len counts", "ring_clear empties"];

    let store = doc_store(&docs);
    let items = store.items_of_kind(KnowledgeKind::Documentation);
    let engine = fn_engine(|_, _| reply(fenced("echo usage")));
    let counts = seed_snippets(&store, &items, &sh_profile(), &engine.gateway, &engine.prompts, "shell");
    assert_eq!(counts, SeedCounts { snippets: 4, pairs: 0 });

    let store = doc_store(&docs);
    let n = AtomicUsize::new(0);
    let engine = fn_engine(move |_, req| {
        let k = n.fetch_add(1, Ordering::SeqCst);
        let name = prompt_of(req).split_whitespace().find(|w| w.starts_with("ring_")).unwrap_or("?").to_string();
        if k.is_multiple_of(2) {
            reply(fenced(&format!("echo {name}")))
        } else {
            reply(fenced(&format!("{name}_missing")))
        }
    });
    let counts = seed_snippets(&store, &items, &sh_profile(), &engine.gateway, &engine.prompts, "shell");
    assert_eq!(counts, SeedCounts { snippets: 2, pairs: 2 });
    assert_eq!(store.count_of_kind(KnowledgeKind::CodeSnippet), 2);
    let pairs = store.items_of_kind(KnowledgeKind::FeedbackPair);
    assert!(pairs.iter().all(|p| p.error.as_deref().unwrap().contains("not found")));

    let counts = seed_snippets(&store, &[], &sh_profile(), &engine.gateway, &engine.prompts, "shell");
    assert_eq!(counts, SeedCounts::default());
}

#[test]
fn input_validity_against_gold() {
    let inputs = vec![TestInput::new("a\n"), TestInput::new("\n")];
    let echo = validate_inputs(Some("cat"), &inputs, &sh_profile()).unwrap();
    assert_eq!((echo.valid, echo.rate, echo.all_valid), (2, 100.0, true));

    let strict = "read x\n[ -n \"$x\" ] || { echo 'empty line' >&2; exit 1; }\necho \"$x\"";
    let half = validate_inputs(Some(strict), &inputs, &sh_profile()).unwrap();
    assert_eq!((half.valid, half.total, half.rate, half.all_valid), (1, 2, 50.0, false));

    assert!(matches!(validate_inputs(None, &inputs, &sh_profile()), Err(CorpusError::MissingGold)));
}

#[test]
fn mutation_of_structured_inputs() {
    let seeds = vec![TestInput::new("3\n10 20 30\nabc\n")];
    let out = mutate_inputs(&seeds, 40, 123).unwrap();
    assert_eq!(out.len(), 40);
    assert_eq!(out, mutate_inputs(&seeds, 40, 123).unwrap());
    assert_ne!(out, mutate_inputs(&seeds, 40, 124).unwrap());
    for input in &out[1..] {
        let lines: Vec<&str> = input.as_str().lines().collect();
        assert_eq!(lines.len(), 3, "{input:?}");
        assert!(!lines[1].trim().is_empty());
    }
}
