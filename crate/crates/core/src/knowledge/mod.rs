//! The knowledge soup: documentation chunks, web pages, verified code
//! snippets and (program, error) pairs, grown append-only during a run.

mod ingest;
mod store;

pub use ingest::{chunk_text, strip_star_lines, UrlListFetcher, WebError, WebFetcher};
pub use store::KnowledgeStore;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::SharedCounter;

/// Chunk size for ingested documentation and web pages.
pub const DEFAULT_CHUNK_TOKENS: usize = 500;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("cannot ingest {path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("feedback pair requires a non-empty error message")]
    EmptyError,
    #[error("duplicate knowledge item id {0}")]
    DuplicateId(String),
    #[error("item {id} violates the {kind} field rules")]
    Malformed { id: String, kind: KnowledgeKind },
    #[error("store file {path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error(transparent)]
    Index(#[from] crate::retrieval::IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    Documentation,
    WebSearch,
    CodeSnippet,
    FeedbackPair,
}

impl KnowledgeKind {
    pub const ALL: [KnowledgeKind; 4] = [
        KnowledgeKind::Documentation,
        KnowledgeKind::WebSearch,
        KnowledgeKind::CodeSnippet,
        KnowledgeKind::FeedbackPair,
    ];

    fn id_prefix(self) -> &'static str {
        match self {
            KnowledgeKind::Documentation => "doc",
            KnowledgeKind::WebSearch => "web",
            KnowledgeKind::CodeSnippet => "snip",
            KnowledgeKind::FeedbackPair => "fb",
        }
    }
}

impl fmt::Display for KnowledgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KnowledgeKind::Documentation => "documentation",
            KnowledgeKind::WebSearch => "web_search",
            KnowledgeKind::CodeSnippet => "code_snippet",
            KnowledgeKind::FeedbackPair => "feedback_pair",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub id: String,
    pub kind: KnowledgeKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub source: String,
    pub token_len: usize,
}

impl KnowledgeItem {
    /// Whether `code` and `error` are present exactly where `kind` requires.
    pub fn is_well_formed(&self) -> bool {
        match self.kind {
            KnowledgeKind::Documentation | KnowledgeKind::WebSearch => {
                self.code.is_none() && self.error.is_none()
            }
            KnowledgeKind::CodeSnippet => self.code.is_some() && self.error.is_none(),
            KnowledgeKind::FeedbackPair => {
                self.code.is_some() && self.error.as_deref().is_some_and(|e| !e.is_empty())
            }
        }
    }
}

/// Outcome of an insertion. `created` is false when an identical item was
/// already present and `item` is that existing item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    pub item: KnowledgeItem,
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum DedupKey {
    Text(KnowledgeKind, String),
    Snippet(String),
    Pair(String, String),
}

/// Append-only collection of knowledge items.
///
/// `generation` increases by one with every item that is actually added;
/// deduplicated insertions leave it untouched.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct KnowledgeBase {
    generation: u64,
    items: Vec<KnowledgeItem>,
    #[serde(skip)]
    by_id: HashMap<String, usize>,
    #[serde(skip)]
    dedup: HashMap<DedupKey, usize>,
    #[serde(skip)]
    counter: SharedCounter,
}

impl KnowledgeBase {
    pub fn new(counter: SharedCounter) -> Self {
        Self {
            counter,
            ..Self::default()
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[KnowledgeItem] {
        &self.items
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn items_of_kind(&self, kind: KnowledgeKind) -> impl Iterator<Item = &KnowledgeItem> {
        self.items.iter().filter(move |it| it.kind == kind)
    }

    pub fn count_of_kind(&self, kind: KnowledgeKind) -> usize {
        self.items_of_kind(kind).count()
    }

    pub fn counter(&self) -> &SharedCounter {
        &self.counter
    }

    /// Stores a program that ran successfully. The item text is the label
    /// line followed by the program.
    pub fn add_verified_snippet(&mut self, program: &str, label: &str) -> Insertion {
        let key = DedupKey::Snippet(program.to_string());
        let text = format!("{label}\n{program}");
        self.insert(
            KnowledgeKind::CodeSnippet,
            key,
            text,
            Some(program.to_string()),
            None,
            format!("verified:{label}"),
        )
    }

    pub fn add_feedback_pair(
        &mut self,
        program: &str,
        error: &str,
    ) -> Result<Insertion, KnowledgeError> {
        if error.trim().is_empty() {
            return Err(KnowledgeError::EmptyError);
        }
        let key = DedupKey::Pair(program.to_string(), error.to_string());
        let text = format!("{error}\n{program}");
        Ok(self.insert(
            KnowledgeKind::FeedbackPair,
            key,
            text,
            Some(program.to_string()),
            Some(error.to_string()),
            "execution".to_string(),
        ))
    }

    /// Adds a plain-text item (documentation or web content).
    pub fn add_text(&mut self, kind: KnowledgeKind, text: &str, source: &str) -> Insertion {
        debug_assert!(matches!(
            kind,
            KnowledgeKind::Documentation | KnowledgeKind::WebSearch
        ));
        let key = DedupKey::Text(kind, text.to_string());
        self.insert(kind, key, text.to_string(), None, None, source.to_string())
    }

    fn insert(
        &mut self,
        kind: KnowledgeKind,
        key: DedupKey,
        text: String,
        code: Option<String>,
        error: Option<String>,
        source: String,
    ) -> Insertion {
        if let Some(&idx) = self.dedup.get(&key) {
            return Insertion {
                item: self.items[idx].clone(),
                created: false,
            };
        }
        let id = self.next_id(kind);
        let token_len = self.counter.count(&text);
        let item = KnowledgeItem {
            id: id.clone(),
            kind,
            text,
            code,
            error,
            source,
            token_len,
        };
        let idx = self.items.len();
        self.items.push(item.clone());
        self.by_id.insert(id, idx);
        self.dedup.insert(key, idx);
        self.generation += 1;
        Insertion {
            item,
            created: true,
        }
    }

    fn next_id(&self, kind: KnowledgeKind) -> String {
        let mut n = self.items.len();
        loop {
            let id = format!("{}-{:06}", kind.id_prefix(), n);
            if !self.by_id.contains_key(&id) {
                return id;
            }
            n += 1;
        }
    }

    /// Scans every item for id uniqueness and kind/field coupling.
    pub fn check_integrity(&self) -> Result<(), KnowledgeError> {
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(KnowledgeError::DuplicateId(item.id.clone()));
            }
            if !item.is_well_formed() {
                return Err(KnowledgeError::Malformed {
                    id: item.id.clone(),
                    kind: item.kind,
                });
            }
        }
        Ok(())
    }

    fn rebuild_lookups(&mut self) {
        self.by_id.clear();
        self.dedup.clear();
        for (idx, item) in self.items.iter().enumerate() {
            self.by_id.insert(item.id.clone(), idx);
            let key = match item.kind {
                KnowledgeKind::CodeSnippet => {
                    DedupKey::Snippet(item.code.clone().unwrap_or_default())
                }
                KnowledgeKind::FeedbackPair => DedupKey::Pair(
                    item.code.clone().unwrap_or_default(),
                    item.error.clone().unwrap_or_default(),
                ),
                kind => DedupKey::Text(kind, item.text.clone()),
            };
            self.dedup.entry(key).or_insert(idx);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("knowledge base serializes")
    }

    pub fn from_json(json: &str, counter: SharedCounter) -> Result<Self, serde_json::Error> {
        let mut kb: KnowledgeBase = serde_json::from_str(json)?;
        kb.counter = counter;
        kb.rebuild_lookups();
        Ok(kb)
    }

    pub fn save(&self, path: &Path) -> Result<(), KnowledgeError> {
        std::fs::write(path, self.to_json()).map_err(|e| KnowledgeError::Store {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path, counter: SharedCounter) -> Result<Self, KnowledgeError> {
        let store_err = |message: String| KnowledgeError::Store {
            path: path.to_path_buf(),
            message,
        };
        let json = std::fs::read_to_string(path).map_err(|e| store_err(e.to_string()))?;
        let kb = Self::from_json(&json, counter).map_err(|e| store_err(e.to_string()))?;
        kb.check_integrity()?;
        Ok(kb)
    }

    /// Splits every text/markdown file under `dir` into documentation items
    /// of at most `chunk_budget` tokens. Returns the number of items created.
    pub fn ingest_documentation(
        &mut self,
        dir: &Path,
        chunk_budget: usize,
    ) -> Result<usize, KnowledgeError> {
        ingest::ingest_documentation(self, dir, chunk_budget)
    }

    /// Fetches the top `top_n` pages for `query`, converts them to text and
    /// stores them as web-search items. Fetch failures are logged and skipped.
    pub fn ingest_web(
        &mut self,
        query: &str,
        top_n: usize,
        fetcher: &dyn WebFetcher,
        chunk_budget: usize,
    ) -> usize {
        ingest::ingest_web(self, query, top_n, fetcher, chunk_budget)
    }
}
