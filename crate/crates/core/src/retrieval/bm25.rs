use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::{IndexError, ScoredItem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Incrementally maintained inverted index with BM25 scoring.
///
/// Scores depend only on the indexed set (not on insertion order): per
/// document, term contributions are summed in query-term order.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    lens: Vec<usize>,
    by_id: HashMap<String, usize>,
    postings: HashMap<String, Vec<(usize, u32)>>,
    total_len: u64,
}

impl Bm25Index {
    pub fn new(params: Bm25Params) -> Self {
        Self {
            params,
            ..Self::default()
        }
    }

    pub fn build<'a, I>(params: Bm25Params, docs: I) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut index = Self::new(params);
        for (id, text) in docs {
            index.insert(id, text)?;
        }
        Ok(index)
    }

    pub fn insert(&mut self, id: &str, text: &str) -> Result<(), IndexError> {
        if self.by_id.contains_key(id) {
            return Err(IndexError::DuplicateId(id.to_string()));
        }
        let doc = self.ids.len();
        let terms = tokenize(text);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in &terms {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, count) in tf {
            self.postings.entry(term).or_default().push((doc, count));
        }
        self.ids.push(id.to_string());
        self.lens.push(terms.len());
        self.by_id.insert(id.to_string(), doc);
        self.total_len += terms.len() as u64;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.ids.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.ids.len() as f64
        }
    }

    pub fn doc_len(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).map(|&d| self.lens[d])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Top `k` documents for `query`, sorted by score descending then id.
    /// Only documents sharing at least one term with the query are returned.
    pub fn search(&self, query: &str, k: usize) -> Vec<ScoredItem> {
        let terms = tokenize(query);
        if terms.is_empty() || k == 0 || self.ids.is_empty() {
            return Vec::new();
        }
        let n = self.ids.len() as f64;
        let avgdl = self.avg_doc_len();
        let Bm25Params { k1, b } = self.params;
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for &(doc, tf) in postings {
                let tf = f64::from(tf);
                let norm = k1 * (1.0 - b + b * self.lens[doc] as f64 / avgdl);
                *acc.entry(doc).or_default() += idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }
        let mut scored: Vec<ScoredItem> = acc
            .into_iter()
            .map(|(doc, score)| ScoredItem {
                item_id: self.ids[doc].clone(),
                score,
            })
            .collect();
        super::sort_scored(&mut scored);
        scored.truncate(k);
        scored
    }
}
