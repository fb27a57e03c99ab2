#![allow(dead_code)]

pub mod http;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use evocode::evaluation::{Problem, Profiles, TestCase};
use evocode::executor::LanguageProfile;
use evocode::knowledge::{KnowledgeBase, KnowledgeKind, KnowledgeStore};
use evocode::llm::mock::FnBackend;
use evocode::llm::{ChatBackend, ChatRequest, ChatResponse, Gateway, ModelRole, TransportError, Usage};
use evocode::pipeline::Engine;
use evocode::tokens::SharedCounter;

/// Runs programs with dash; its errors look like `main.sh: 2: foo: not found`.
pub fn sh_profile() -> LanguageProfile {
    LanguageProfile {
        name: "sh".into(),
        file_extension: "sh".into(),
        compile_cmd: None,
        run_cmd: vec!["sh".into(), "{file}".into()],
        timeout_s: 5.0,
        error_line_pattern: r"main\.sh: (\d+):".into(),
    }
}

/// Prints the program text itself, whatever the input.
pub fn echo_profile() -> LanguageProfile {
    LanguageProfile {
        name: "echo".into(),
        file_extension: "txt".into(),
        compile_cmd: None,
        run_cmd: vec!["sh".into(), "-c".into(), "cat \"$0\"".into(), "{file}".into()],
        timeout_s: 5.0,
        error_line_pattern: r"line (\d+)".into(),
    }
}

pub fn profiles() -> Profiles {
    [sh_profile(), echo_profile()]
        .into_iter()
        .map(|p| (p.name.clone(), p))
        .collect()
}

pub fn fenced(code: &str) -> String {
    format!("Here is the program.\n```sh\n{code}\n```\n")
}

pub fn prompt_of(req: &ChatRequest) -> &str {
    req.messages.last().map(|m| m.content.as_str()).unwrap_or("")
}

pub fn reply(content: impl Into<String>) -> Result<ChatResponse, TransportError> {
    Ok(ChatResponse {
        content: content.into(),
        usage: None,
    })
}

pub fn reply_usage(content: impl Into<String>, prompt: usize, completion: usize) -> Result<ChatResponse, TransportError> {
    Ok(ChatResponse {
        content: content.into(),
        usage: Some(Usage {
            prompt_tokens: prompt,
            completion_tokens: completion,
        }),
    })
}

pub fn engine(backend: impl ChatBackend + 'static) -> Engine {
    Engine::new(Arc::new(Gateway::uniform(Arc::new(backend), SharedCounter::default())))
}

pub fn fn_engine<F>(f: F) -> Engine
where
    F: Fn(ModelRole, &ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync + 'static,
{
    engine(FnBackend(f))
}

/// Generator whose n-th program fails with a message naming n.
pub fn distinct_failures() -> impl Fn(ModelRole, &ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync {
    let n = AtomicUsize::new(0);
    move |role, _req| match role {
        ModelRole::Generator => {
            let k = n.fetch_add(1, Ordering::SeqCst);
            reply(fenced(&format!("echo \"failure number {k}\" >&2\nexit 1")))
        }
        ModelRole::QueryEvolver => reply("which option fixes the failure"),
        ModelRole::TestGenerator => reply("```input\n1\n```\n```output\n1\n```"),
    }
}

pub fn doc_store(docs: &[&str]) -> KnowledgeStore {
    let store = KnowledgeStore::new(KnowledgeBase::new(SharedCounter::default())).unwrap();
    for (i, d) in docs.iter().enumerate() {
        store.add_text(KnowledgeKind::Documentation, d, &format!("doc:{i}"));
    }
    store
}

pub fn sample_docs() -> Vec<&'static str> {
    vec![
        "ring_push appends an element to the ring buffer and returns the new length",
        "ring_pop removes the oldest element; it fails on an empty ring",
        "print_line writes its argument followed by a newline to standard output",
        "parse_int reads a decimal integer from a string",
    ]
}

/// Ten echo-profile problems; problem k expects the single line `answer-k`.
pub fn toy_dataset() -> Vec<Problem> {
    (0..10)
        .map(|k| Problem {
            id: format!("toy-{k}"),
            description: format!("Print the word answer-{k} on one line."),
            profile: "echo".into(),
            tests: vec![
                TestCase {
                    input: String::new(),
                    expected: format!("answer-{k}\n"),
                },
                TestCase {
                    input: "ignored\n".into(),
                    expected: format!("answer-{k}"),
                },
            ],
            gold_program: Some(format!("answer-{k}\n")),
            gold_doc_ids: None,
            dataset: Some(if k % 2 == 0 { "Even".into() } else { "Odd".into() }),
        })
        .collect()
}

/// Answers toy problems 0..solved correctly and the rest wrongly.
pub fn toy_generator(solved: usize) -> impl Fn(ModelRole, &ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync {
    move |role, req| {
        let prompt = prompt_of(req);
        match role {
            ModelRole::Generator => {
                let problem = prompt.rsplit("## Problem").next().unwrap_or(prompt);
                let k: usize = problem
                    .split("answer-")
                    .nth(1)
                    .and_then(|rest| rest.split(|c: char| !c.is_ascii_digit()).next())
                    .and_then(|d| d.parse().ok())
                    .unwrap_or(99);
                if k < solved {
                    reply(format!("```\nanswer-{k}\n```"))
                } else {
                    reply(format!("```\nwrong-{k}\n```"))
                }
            }
            ModelRole::QueryEvolver => reply("print a word"),
            ModelRole::TestGenerator => reply("```input\nx\n```"),
        }
    }
}
