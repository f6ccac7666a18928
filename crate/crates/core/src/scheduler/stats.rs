use std::sync::atomic::{AtomicU64, Ordering};

/// Per-worker monotonic counters.
#[derive(Debug, Default)]
pub(crate) struct WorkerStats {
    tasks_executed: AtomicU64,
    steal_attempts: AtomicU64,
    steals_succeeded: AtomicU64,
    leaf_fetches: AtomicU64,
}

impl WorkerStats {
    pub(crate) fn record_executed(&self) {
        self.tasks_executed.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_steal_attempt(&self) {
        self.steal_attempts.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_steal_success(&self) {
        self.steals_succeeded.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_leaf_fetch(&self) {
        self.leaf_fetches.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn snapshot(&self) -> WorkerSnapshot {
        // succeeded is read first so that the snapshot never shows more
        // successes than attempts
        let steals_succeeded = self.steals_succeeded.load(Ordering::Acquire);
        WorkerSnapshot {
            tasks_executed: self.tasks_executed.load(Ordering::Acquire),
            steal_attempts: self.steal_attempts.load(Ordering::Acquire),
            steals_succeeded,
            leaf_fetches: self.leaf_fetches.load(Ordering::Acquire),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkerSnapshot {
    pub tasks_executed: u64,
    pub steal_attempts: u64,
    pub steals_succeeded: u64,
    /// Tasks a hierarchical leaf obtained by pulling from its ancestors.
    pub leaf_fetches: u64,
}

/// Point-in-time view of the scheduler's counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StealStats {
    pub workers: Vec<WorkerSnapshot>,
    /// Tasks created (first enqueue) over the scheduler's lifetime.
    pub spawned: u64,
    /// Tasks dropped without running, at shutdown.
    pub discarded: u64,
}

impl StealStats {
    pub fn tasks_executed(&self) -> u64 {
        self.workers.iter().map(|w| w.tasks_executed).sum()
    }

    pub fn steal_attempts(&self) -> u64 {
        self.workers.iter().map(|w| w.steal_attempts).sum()
    }

    pub fn steals_succeeded(&self) -> u64 {
        self.workers.iter().map(|w| w.steals_succeeded).sum()
    }

    /// Element-wise `self - earlier`.
    pub fn since(&self, earlier: &StealStats) -> StealStats {
        StealStats {
            workers: self
                .workers
                .iter()
                .zip(&earlier.workers)
                .map(|(a, b)| WorkerSnapshot {
                    tasks_executed: a.tasks_executed - b.tasks_executed,
                    steal_attempts: a.steal_attempts - b.steal_attempts,
                    steals_succeeded: a.steals_succeeded - b.steals_succeeded,
                    leaf_fetches: a.leaf_fetches - b.leaf_fetches,
                })
                .collect(),
            spawned: self.spawned - earlier.spawned,
            discarded: self.discarded - earlier.discarded,
        }
    }
}
