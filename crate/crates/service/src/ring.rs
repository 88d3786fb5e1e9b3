use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use intentgate_core::pipeline::Decision;

/// Bounded in-memory store of recent decisions; the oldest entry is evicted
/// once `capacity` is reached. Ids start at 1 and are never reused.
#[derive(Debug)]
pub struct DecisionRing {
    capacity: usize,
    next_id: AtomicU64,
    entries: Mutex<VecDeque<(u64, Arc<Decision>)>>,
}

impl DecisionRing {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            next_id: AtomicU64::new(1),
            entries: Mutex::new(VecDeque::with_capacity(capacity.max(1))),
        }
    }

    pub fn push(&self, decision: Decision) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries.push_back((id, Arc::new(decision)));
        while entries.len() > self.capacity {
            entries.pop_front();
        }
        id
    }

    pub fn get(&self, id: u64) -> Option<Arc<Decision>> {
        let entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, d)| d.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
