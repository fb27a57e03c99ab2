use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;

use super::{Insertion, KnowledgeBase, KnowledgeError, KnowledgeItem, KnowledgeKind};
use crate::retrieval::{Bm25Index, Bm25Params, ScoredItem};

struct Inner {
    kb: KnowledgeBase,
    indexes: BTreeMap<KnowledgeKind, Bm25Index>,
}

/// A knowledge base plus one BM25 index per kind, shared between runs.
///
/// Readers retrieve concurrently; every mutation takes the write lock and
/// updates the item list and its index together, so a reader sees either
/// the state before an insertion or the state after it.
pub struct KnowledgeStore {
    inner: RwLock<Inner>,
    params: Bm25Params,
}

impl KnowledgeStore {
    pub fn new(kb: KnowledgeBase) -> Result<Self, KnowledgeError> {
        Self::with_params(kb, Bm25Params::default())
    }

    pub fn with_params(kb: KnowledgeBase, params: Bm25Params) -> Result<Self, KnowledgeError> {
        let mut indexes = BTreeMap::new();
        for kind in KnowledgeKind::ALL {
            let docs = kb
                .items_of_kind(kind)
                .map(|it| (it.id.as_str(), it.text.as_str()));
            indexes.insert(kind, Bm25Index::build(params, docs)?);
        }
        Ok(Self {
            inner: RwLock::new(Inner { kb, indexes }),
            params,
        })
    }

    pub fn load(path: &Path, counter: crate::tokens::SharedCounter) -> Result<Self, KnowledgeError> {
        Self::new(KnowledgeBase::load(path, counter)?)
    }

    /// Independent copy with freshly built indexes.
    pub fn fork(&self) -> Result<Self, KnowledgeError> {
        Self::with_params(self.snapshot(), self.params)
    }

    pub fn snapshot(&self) -> KnowledgeBase {
        self.read().kb.clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), KnowledgeError> {
        self.read().kb.save(path)
    }

    pub fn generation(&self) -> u64 {
        self.read().kb.generation()
    }

    pub fn len(&self) -> usize {
        self.read().kb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count_of_kind(&self, kind: KnowledgeKind) -> usize {
        self.read().kb.count_of_kind(kind)
    }

    pub fn items_of_kind(&self, kind: KnowledgeKind) -> Vec<KnowledgeItem> {
        self.read().kb.items_of_kind(kind).cloned().collect()
    }

    pub fn get(&self, id: &str) -> Option<KnowledgeItem> {
        self.read().kb.get(id).cloned()
    }

    /// BM25 top-`k` among items of one kind.
    pub fn retrieve_sparse(
        &self,
        kind: KnowledgeKind,
        query: &str,
        k: usize,
    ) -> Vec<(KnowledgeItem, ScoredItem)> {
        let inner = self.read();
        inner.indexes[&kind]
            .search(query, k)
            .into_iter()
            .filter_map(|s| inner.kb.get(&s.item_id).cloned().map(|it| (it, s)))
            .collect()
    }

    pub fn add_verified_snippet(&self, program: &str, label: &str) -> Insertion {
        let mut inner = self.write();
        let ins = inner.kb.add_verified_snippet(program, label);
        Self::index_new(&mut inner, &ins);
        ins
    }

    pub fn add_feedback_pair(&self, program: &str, error: &str) -> Result<Insertion, KnowledgeError> {
        let mut inner = self.write();
        let ins = inner.kb.add_feedback_pair(program, error)?;
        Self::index_new(&mut inner, &ins);
        Ok(ins)
    }

    pub fn add_text(&self, kind: KnowledgeKind, text: &str, source: &str) -> Insertion {
        let mut inner = self.write();
        let ins = inner.kb.add_text(kind, text, source);
        Self::index_new(&mut inner, &ins);
        ins
    }

    fn index_new(inner: &mut Inner, ins: &Insertion) {
        if ins.created {
            inner
                .indexes
                .get_mut(&ins.item.kind)
                .expect("index per kind")
                .insert(&ins.item.id, &ins.item.text)
                .expect("fresh knowledge ids are unique");
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().expect("knowledge store lock poisoned")
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().expect("knowledge store lock poisoned")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::SharedCounter;
    use std::sync::Arc;

    #[test]
    fn inserts_are_searchable_immediately() {
        let store = KnowledgeStore::new(KnowledgeBase::new(SharedCounter::default())).unwrap();
        assert!(store
            .retrieve_sparse(KnowledgeKind::CodeSnippet, "print", 5)
            .is_empty());
        store.add_verified_snippet("print(1)", "p1");
        let hits = store.retrieve_sparse(KnowledgeKind::CodeSnippet, "print", 5);
        assert_eq!(hits.len(), 1);
        // Kinds have separate pools.
        assert!(store
            .retrieve_sparse(KnowledgeKind::Documentation, "print", 5)
            .is_empty());
    }

    #[test]
    fn fork_is_independent() {
        let store = KnowledgeStore::new(KnowledgeBase::new(SharedCounter::default())).unwrap();
        store.add_text(KnowledgeKind::Documentation, "alpha", "doc:a");
        let fork = store.fork().unwrap();
        fork.add_verified_snippet("x", "l");
        assert_eq!(store.generation(), 1);
        assert_eq!(fork.generation(), 2);
    }

    #[test]
    fn concurrent_writers_and_readers() {
        let store = Arc::new(KnowledgeStore::new(KnowledgeBase::new(SharedCounter::default())).unwrap());
        std::thread::scope(|s| {
            for t in 0..4 {
                let store = store.clone();
                s.spawn(move || {
                    for i in 0..25 {
                        store.add_verified_snippet(&format!("emit({t}, {i})"), "w");
                        let hits = store.retrieve_sparse(KnowledgeKind::CodeSnippet, "emit", 200);
                        assert!(hits.iter().all(|(it, _)| it.code.is_some()));
                    }
                });
            }
        });
        assert_eq!(store.len(), 100);
        assert_eq!(store.generation(), 100);
        store.snapshot().check_integrity().unwrap();
        assert_eq!(store.retrieve_sparse(KnowledgeKind::CodeSnippet, "emit", 1000).len(), 100);
    }
}
