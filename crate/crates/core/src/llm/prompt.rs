//! Versioned prompt templates with `{{slot}}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::TestInput;
use crate::retrieval::{ContextEntry, RetrievedContext};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template} references unfilled slot {slot:?}")]
    MissingSlot { template: String, slot: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
}

impl Template {
    pub fn new(name: &str, text: &str) -> Self {
        Self {
            name: name.to_string(),
            text: text.to_string(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Substitutes every `{{slot}}` in one pass; slot values are inserted
    /// verbatim and never re-scanned.
    pub fn render(&self, slots: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                rest = "";
                break;
            };
            let name = after[..end].trim();
            if is_slot_name(name) {
                let value = slots.get(name).ok_or_else(|| TemplateError::MissingSlot {
                    template: self.name.clone(),
                    slot: name.to_string(),
                })?;
                out.push_str(value);
            } else {
                out.push_str(&rest[start..start + 2 + end + 2]);
            }
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub enum PromptKind<'a> {
    Generate {
        problem: &'a str,
        context: &'a RetrievedContext,
    },
    EvolveQuery {
        problem: &'a str,
        program: &'a str,
        inputs: &'a [TestInput],
        feedback: &'a str,
    },
    GenerateTestInputs {
        problem: &'a str,
        program: &'a str,
    },
    SeedSnippet {
        language: &'a str,
        doc: &'a str,
    },
}

const NAMES: [&str; 4] = ["generate", "evolve_query", "test_inputs", "seed_snippet"];

/// The four templates used by a run, identified by a content hash.
#[derive(Debug, Clone)]
pub struct PromptSet {
    generate: Template,
    evolve_query: Template,
    test_inputs: Template,
    seed_snippet: Template,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            generate: Template::new("generate", include_str!("../../templates/generate.txt")),
            evolve_query: Template::new("evolve_query", include_str!("../../templates/evolve_query.txt")),
            test_inputs: Template::new("test_inputs", include_str!("../../templates/test_inputs.txt")),
            seed_snippet: Template::new("seed_snippet", include_str!("../../templates/seed_snippet.txt")),
        }
    }

    /// Loads `<name>.txt` for each template from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let load = |name: &str| {
            let path = dir.join(format!("{name}.txt"));
            std::fs::read_to_string(&path)
                .map(|text| Template::new(name, &text))
                .map_err(|e| TemplateError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
        };
        Ok(Self {
            generate: load(NAMES[0])?,
            evolve_query: load(NAMES[1])?,
            test_inputs: load(NAMES[2])?,
            seed_snippet: load(NAMES[3])?,
        })
    }

    /// Hex SHA-256 over all template names and texts.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in [&self.generate, &self.evolve_query, &self.test_inputs, &self.seed_snippet] {
            h.update(t.name.as_bytes());
            h.update([0]);
            h.update(t.text.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn render(&self, kind: &PromptKind<'_>) -> Result<String, TemplateError> {
        let mut slots = BTreeMap::new();
        let template = match kind {
            PromptKind::Generate { problem, context } => {
                slots.insert("problem", problem.to_string());
                slots.insert("context", render_context(context));
                &self.generate
            }
            PromptKind::EvolveQuery {
                problem,
                program,
                inputs,
                feedback,
            } => {
                slots.insert("problem", problem.to_string());
                slots.insert("program", program.to_string());
                slots.insert("inputs", render_inputs(inputs));
                slots.insert("feedback", feedback.to_string());
                &self.evolve_query
            }
            PromptKind::GenerateTestInputs { problem, program } => {
                slots.insert("problem", problem.to_string());
                slots.insert("program", program.to_string());
                &self.test_inputs
            }
            PromptKind::SeedSnippet { language, doc } => {
                slots.insert("language", language.to_string());
                slots.insert("doc", doc.to_string());
                &self.seed_snippet
            }
        };
        template.render(&slots)
    }
}

/// Context sections in fixed order: web, feedback, snippets, documentation.
/// Empty sections are left out entirely.
fn render_context(ctx: &RetrievedContext) -> String {
    let mut out = String::new();
    let mut section = |title: &str, entries: &[ContextEntry], fenced: bool| {
        if entries.is_empty() {
            return;
        }
        out.push_str("## ");
        out.push_str(title);
        out.push_str("\n\n");
        for e in entries {
            if fenced {
                out.push_str("```\n");
                out.push_str(&e.text);
                out.push_str("\n```\n\n");
            } else {
                out.push_str(&e.text);
                out.push_str("\n\n");
            }
        }
    };
    section("Web search results", &ctx.web, false);
    section("Execution feedback", &ctx.feedback, false);
    section("Code snippets", &ctx.snippets, true);
    section("Documentation", &ctx.docs, false);
    out
}

fn render_inputs(inputs: &[TestInput]) -> String {
    if inputs.is_empty() {
        return "(none)".to_string();
    }
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| format!("Input {}:\n```\n{}\n```", i + 1, input.as_str()))
        .collect::<Vec<_>>()
        .join("\n")
}
