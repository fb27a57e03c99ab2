use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Query, ScoredItem};
use crate::knowledge::KnowledgeItem;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding endpoint unreachable: {0}")]
    Transport(String),
    #[error("malformed embedding response: {0}")]
    Protocol(String),
}

pub trait EmbeddingClient: Send + Sync {
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

#[derive(Debug, Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

/// Client for `POST {base_url}/embeddings` style endpoints.
pub struct HttpEmbeddingClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbeddingClient {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl EmbeddingClient for HttpEmbeddingClient {
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let url = format!("{}/embeddings", self.base_url);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(EmbeddingRequest {
                input: inputs,
                model: &self.model,
            })
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let body: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::Protocol(e.to_string()))?;
        if body.data.len() != inputs.len() {
            return Err(EmbeddingError::Protocol(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                body.data.len()
            )));
        }
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Item id and text fingerprint.
type CacheKey = (String, u64);

/// Cosine-similarity retrieval over an embedding endpoint.
///
/// Item embeddings are cached per item id and text fingerprint, so a second
/// retrieval over an unchanged item set only embeds the query.
pub struct DenseRetriever {
    client: Arc<dyn EmbeddingClient>,
    instruction: Option<String>,
    cache: Mutex<HashMap<CacheKey, Arc<Vec<f32>>>>,
}

impl DenseRetriever {
    pub fn new(client: Arc<dyn EmbeddingClient>, instruction: Option<String>) -> Self {
        Self {
            client,
            instruction,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn retrieve(
        &self,
        items: &[KnowledgeItem],
        query: &Query,
        k: usize,
    ) -> Result<Vec<ScoredItem>, EmbeddingError> {
        if k == 0 || items.is_empty() {
            return Ok(Vec::new());
        }
        let query_text = match &self.instruction {
            Some(instr) => format!("{instr}\n{}", query.text),
            None => query.text.clone(),
        };
        let query_vec = self
            .client
            .embed(&[query_text])?
            .pop()
            .ok_or_else(|| EmbeddingError::Protocol("empty response".into()))?;

        let keys: Vec<CacheKey> = items
            .iter()
            .map(|it| (it.id.clone(), fingerprint(&it.text)))
            .collect();
        let missing: Vec<usize> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            (0..items.len()).filter(|&i| !cache.contains_key(&keys[i])).collect()
        };
        if !missing.is_empty() {
            let texts: Vec<String> = missing.iter().map(|&i| items[i].text.clone()).collect();
            let vecs = self.client.embed(&texts)?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (&i, v) in missing.iter().zip(vecs) {
                cache.insert(keys[i].clone(), Arc::new(v));
            }
        }

        let cache = self.cache.lock().expect("embedding cache poisoned");
        let mut scored: Vec<ScoredItem> = items
            .iter()
            .zip(&keys)
            .map(|(it, key)| ScoredItem {
                item_id: it.id.clone(),
                score: cosine(&query_vec, &cache[key]),
            })
            .collect();
        drop(cache);
        super::sort_scored(&mut scored);
        scored.truncate(k);
        Ok(scored)
    }
}

fn fingerprint(text: &str) -> u64 {
    let mut h = DefaultHasher::new();
    text.hash(&mut h);
    h.finish()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}
