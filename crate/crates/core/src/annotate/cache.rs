use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use crate::model::Annotation;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub provider_id: String,
    pub text_digest: String,
    pub run_id: String,
}

/// Annotation cache keyed by (provider, text digest, run). Readers share the
/// lock; inserts take it exclusively. Only successful annotations are stored.
#[derive(Debug, Default)]
pub struct AnnotationCache {
    entries: RwLock<HashMap<CacheKey, Annotation>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl AnnotationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<Annotation> {
        let found = self
            .entries
            .read()
            .expect("cache lock poisoned")
            .get(key)
            .cloned();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn insert(&self, key: CacheKey, annotation: Annotation) {
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key, annotation);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}
