use std::path::Path;

use log::warn;
use thiserror::Error;
use walkdir::WalkDir;

use super::{KnowledgeBase, KnowledgeError, KnowledgeKind};
use crate::tokens::SharedCounter;

const DOC_EXTENSIONS: &[&str] = &["md", "markdown", "txt", "text", "rst"];

#[derive(Debug, Error)]
#[error("{0}")]
pub struct WebError(pub String);

/// Search plus page retrieval for web-search knowledge.
pub trait WebFetcher: Send + Sync {
    /// Ranked result URLs for `query`, at most `top_n`.
    fn search(&self, query: &str, top_n: usize) -> Result<Vec<String>, WebError>;

    /// Raw HTML of one result page.
    fn fetch(&self, url: &str) -> Result<String, WebError>;
}

/// Fetcher over an operator-supplied, already ranked URL list. Useful when
/// search results were collected offline.
pub struct UrlListFetcher {
    urls: Vec<String>,
    agent: ureq::Agent,
}

impl UrlListFetcher {
    pub fn new(urls: Vec<String>) -> Self {
        Self {
            urls,
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl WebFetcher for UrlListFetcher {
    fn search(&self, _query: &str, top_n: usize) -> Result<Vec<String>, WebError> {
        Ok(self.urls.iter().take(top_n).cloned().collect())
    }

    fn fetch(&self, url: &str) -> Result<String, WebError> {
        self.agent
            .get(url)
            .call()
            .map_err(|e| WebError(e.to_string()))?
            .body_mut()
            .read_to_string()
            .map_err(|e| WebError(e.to_string()))
    }
}

/// Drops lines that start with `*`; in converted pages these are almost
/// always navigation or link listings.
pub fn strip_star_lines(text: &str) -> String {
    text.lines()
        .filter(|line| !line.trim_start().starts_with('*'))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(super) fn html_to_text(html: &str) -> String {
    html2text::from_read(html.as_bytes(), 10_000).unwrap_or_else(|_| html.to_string())
}

/// Greedy paragraph packing. Paragraphs are separated by blank lines; a
/// paragraph larger than `budget` is split at line boundaries, and a single
/// line larger than `budget` at character boundaries.
pub fn chunk_text(text: &str, budget: usize, counter: &SharedCounter) -> Vec<String> {
    let budget = budget.max(1);
    let mut units = Vec::new();
    for para in paragraphs(text) {
        if counter.count(&para) <= budget {
            units.push(para);
        } else {
            split_lines(&para, budget, counter, &mut units);
        }
    }

    let mut chunks = Vec::new();
    let mut current: Option<String> = None;
    for unit in units {
        current = Some(match current.take() {
            None => unit,
            Some(cur) => {
                let joined = format!("{cur}\n\n{unit}");
                if counter.count(&joined) <= budget {
                    joined
                } else {
                    chunks.push(cur);
                    unit
                }
            }
        });
    }
    chunks.extend(current);
    chunks
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(cur.join("\n"));
                cur.clear();
            }
        } else {
            cur.push(line.trim_end());
        }
    }
    if !cur.is_empty() {
        out.push(cur.join("\n"));
    }
    out
}

fn split_lines(para: &str, budget: usize, counter: &SharedCounter, out: &mut Vec<String>) {
    let mut cur = String::new();
    for line in para.lines() {
        let pieces = if counter.count(line) > budget {
            split_chars(line, budget, counter)
        } else {
            vec![line.to_string()]
        };
        for piece in pieces {
            if cur.is_empty() {
                cur = piece;
                continue;
            }
            let joined = format!("{cur}\n{piece}");
            if counter.count(&joined) <= budget {
                cur = joined;
            } else {
                out.push(std::mem::replace(&mut cur, piece));
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
}

fn split_chars(line: &str, budget: usize, counter: &SharedCounter) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = line;
    while !rest.is_empty() {
        let bounds: Vec<usize> = rest
            .char_indices()
            .map(|(i, _)| i)
            .skip(1)
            .chain(std::iter::once(rest.len()))
            .collect();
        // Largest prefix that fits; always take at least one character.
        let fits = bounds.partition_point(|&end| counter.count(&rest[..end]) <= budget);
        let end = bounds[fits.saturating_sub(1)];
        out.push(rest[..end].to_string());
        rest = &rest[end..];
    }
    out
}

pub(super) fn ingest_documentation(
    kb: &mut KnowledgeBase,
    dir: &Path,
    chunk_budget: usize,
) -> Result<usize, KnowledgeError> {
    let ingest_err = |path: &Path, source: std::io::Error| KnowledgeError::Ingest {
        path: path.to_path_buf(),
        source,
    };
    if !dir.is_dir() {
        return Err(ingest_err(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a readable directory"),
        ));
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            ingest_err(&path, e.into())
        })?;
        let is_doc = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| DOC_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if entry.file_type().is_file() && is_doc {
            files.push(entry.into_path());
        }
    }

    let counter = kb.counter().clone();
    let mut created = 0;
    for path in files {
        let bytes = std::fs::read(&path).map_err(|e| ingest_err(&path, e))?;
        let text = String::from_utf8_lossy(&bytes);
        let rel = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
        for chunk in chunk_text(&text, chunk_budget, &counter) {
            let source = format!("doc:{rel}");
            if kb.add_text(KnowledgeKind::Documentation, &chunk, &source).created {
                created += 1;
            }
        }
    }
    Ok(created)
}

pub(super) fn ingest_web(
    kb: &mut KnowledgeBase,
    query: &str,
    top_n: usize,
    fetcher: &dyn WebFetcher,
    chunk_budget: usize,
) -> usize {
    let urls = match fetcher.search(query, top_n.max(1)) {
        Ok(urls) => urls,
        Err(e) => {
            warn!("web search for {query:?} failed: {e}");
            return 0;
        }
    };
    let counter = kb.counter().clone();
    let mut created = 0;
    for url in urls.into_iter().take(top_n.max(1)) {
        let html = match fetcher.fetch(&url) {
            Ok(html) => html,
            Err(e) => {
                warn!("skipping {url}: {e}");
                continue;
            }
        };
        let text = strip_star_lines(&html_to_text(&html));
        for chunk in chunk_text(&text, chunk_budget, &counter) {
            if kb
                .add_text(KnowledgeKind::WebSearch, &chunk, &format!("web:{url}"))
                .created
            {
                created += 1;
            }
        }
    }
    created
}
