//! Worker pool and scheduling policies.
//!
//! A [`Scheduler`] owns a fixed set of worker threads and one of three
//! queue layouts (see [`Policy`]). The layout can be swapped while the
//! workers run with [`Scheduler::set_policy`]: submissions pause, every
//! queued task is moved to a staging list, the new layout is built and the
//! staged tasks are dealt back out round-robin.

mod queues;
mod stats;
mod task;

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle, Thread};
use std::time::Duration;

use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};

pub use queues::QueueId;
pub use stats::{StealStats, WorkerSnapshot};
pub use task::{current_task, Priority, Task, TaskId, TaskInfo, TaskState};

pub(crate) use task::Work;
use queues::WorkQueues;
use stats::WorkerStats;

const SPIN_ATTEMPTS: u32 = 100;
const MAX_PARK: Duration = Duration::from_millis(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// One queue per worker; no stealing.
    Static,
    /// One queue per worker plus a high-priority queue; idle workers steal.
    LocalPriority,
    /// Tree of queues; work enters at the root and trickles down.
    Hierarchical,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Static, Policy::LocalPriority, Policy::Hierarchical];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Static => "static",
            Policy::LocalPriority => "local_priority",
            Policy::Hierarchical => "hierarchical",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Policy> {
        match s {
            "static" => Ok(Policy::Static),
            "local_priority" | "local-priority" | "local" => Ok(Policy::LocalPriority),
            "hierarchical" => Ok(Policy::Hierarchical),
            other => Err(Error::Config(format!("unknown scheduling policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulerConfig {
    pub policy: Policy,
    pub workers: usize,
    /// Fan-out of the hierarchical tree. Ignored by other policies.
    pub tree_arity: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            policy: Policy::LocalPriority,
            workers: 4,
            tree_arity: 2,
        }
    }
}

impl SchedulerConfig {
    pub fn new(policy: Policy, workers: usize) -> Self {
        SchedulerConfig {
            policy,
            workers,
            tree_arity: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.tree_arity < 2 {
            return Err(Error::Config("tree_arity must be at least 2".into()));
        }
        Ok(())
    }
}

/// Returned by [`Scheduler::shutdown`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShutdownReport {
    /// Tasks that never ran to completion.
    pub discarded: u64,
}

const RUNNING: u8 = 0;
const DRAINING: u8 = 1;
const STOPPED: u8 = 2;

static NEXT_SCHEDULER_ID: AtomicUsize = AtomicUsize::new(1);

pub(crate) struct Shared {
    id: usize,
    workers: usize,
    tree_arity: usize,
    queues: RwLock<WorkQueues>,
    stats: Vec<WorkerStats>,
    next_task_id: AtomicU64,
    round_robin: AtomicUsize,
    spawned: AtomicU64,
    terminated: AtomicU64,
    queued: AtomicUsize,
    active: AtomicUsize,
    state: AtomicU8,
    sleeping: Vec<AtomicBool>,
    threads: Mutex<Vec<Thread>>,
    handles: Mutex<Vec<JoinHandle<()>>>,
    report: Mutex<Option<ShutdownReport>>,
}

thread_local! {
    static WORKER: RefCell<Option<(Arc<Shared>, usize)>> = const { RefCell::new(None) };
}

/// Handle to a running worker pool. Cloning is cheap.
#[derive(Clone)]
pub struct Scheduler {
    shared: Arc<Shared>,
}

/// Non-owning scheduler reference held by futures.
#[derive(Clone, Default)]
pub(crate) struct WeakScheduler(Weak<Shared>);

impl WeakScheduler {
    pub(crate) fn upgrade(&self) -> Option<Scheduler> {
        self.0.upgrade().map(|shared| Scheduler { shared })
    }
}

impl fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scheduler")
            .field("policy", &self.policy())
            .field("workers", &self.shared.workers)
            .finish()
    }
}

impl Scheduler {
    /// Starts the worker threads.
    pub fn new(cfg: SchedulerConfig) -> Result<Scheduler> {
        Self::with_name(cfg, "amt")
    }

    pub(crate) fn with_name(cfg: SchedulerConfig, name: &str) -> Result<Scheduler> {
        cfg.validate()?;
        let shared = Arc::new(Shared {
            id: NEXT_SCHEDULER_ID.fetch_add(1, Ordering::Relaxed),
            workers: cfg.workers,
            tree_arity: cfg.tree_arity,
            queues: RwLock::new(WorkQueues::new(&cfg)),
            stats: (0..cfg.workers).map(|_| WorkerStats::default()).collect(),
            next_task_id: AtomicU64::new(1),
            round_robin: AtomicUsize::new(0),
            spawned: AtomicU64::new(0),
            terminated: AtomicU64::new(0),
            queued: AtomicUsize::new(0),
            active: AtomicUsize::new(0),
            state: AtomicU8::new(RUNNING),
            sleeping: (0..cfg.workers).map(|_| AtomicBool::new(false)).collect(),
            threads: Mutex::new(Vec::new()),
            handles: Mutex::new(Vec::new()),
            report: Mutex::new(None),
        });
        let mut handles = Vec::with_capacity(cfg.workers);
        for w in 0..cfg.workers {
            let s = shared.clone();
            let h = thread::Builder::new()
                .name(format!("{name}-worker-{w}"))
                .spawn(move || worker_main(s, w))
                .map_err(|e| Error::Boot(format!("cannot start worker thread: {e}")))?;
            handles.push(h);
        }
        *shared.threads.lock() = handles.iter().map(|h| h.thread().clone()).collect();
        *shared.handles.lock() = handles;
        Ok(Scheduler { shared })
    }

    pub(crate) fn downgrade(&self) -> WeakScheduler {
        WeakScheduler(Arc::downgrade(&self.shared))
    }

    pub fn workers(&self) -> usize {
        self.shared.workers
    }

    pub fn policy(&self) -> Policy {
        self.shared.queues.read().policy()
    }

    pub fn is_running(&self) -> bool {
        self.shared.state.load(Ordering::SeqCst) == RUNNING
    }

    /// Index of the current thread if it is one of this scheduler's workers.
    pub fn current_worker(&self) -> Option<usize> {
        WORKER.with(|w| match &*w.borrow() {
            Some((s, idx)) if s.id == self.shared.id => Some(*idx),
            _ => None,
        })
    }

    /// The scheduler whose worker is running on this thread.
    pub fn current() -> Option<Scheduler> {
        WORKER.with(|w| {
            w.borrow()
                .as_ref()
                .map(|(s, _)| Scheduler { shared: s.clone() })
        })
    }

    /// Creates a task around `work` and enqueues it. `hint` selects the
    /// worker for the static and local-priority policies; without it the
    /// submitting worker is used, or round-robin from outside the pool.
    pub(crate) fn submit(&self, priority: Priority, hint: Option<usize>, work: Work) -> Result<TaskId> {
        if self.shared.state.load(Ordering::SeqCst) != RUNNING {
            return Err(Error::Shutdown);
        }
        let id = self.shared.next_task_id.fetch_add(1, Ordering::Relaxed);
        let task = Task::new(id, priority, work, Arc::downgrade(&self.shared));
        self.shared.spawned.fetch_add(1, Ordering::SeqCst);
        let hint = hint.map(|h| h % self.shared.workers);
        self.shared.enqueue(task, hint);
        Ok(id)
    }

    /// Runs `f` as a task; fire-and-forget.
    pub fn submit_fn<F>(&self, priority: Priority, hint: Option<usize>, f: F) -> Result<TaskId>
    where
        F: FnOnce() + Send + 'static,
    {
        self.submit(priority, hint, Box::pin(async move { f() }))
    }

    /// Runs one task on behalf of worker `w` if any is available.
    pub(crate) fn run_one(&self, w: usize) -> bool {
        self.shared.run_one(w)
    }

    /// Switches to `policy`. Queued tasks are moved to the new layout;
    /// returns how many were moved. Switching to the current policy is a
    /// no-op.
    pub fn set_policy(&self, policy: Policy) -> usize {
        let s = &self.shared;
        let mut queues = s.queues.write();
        if queues.policy() == policy {
            return 0;
        }
        let staged = queues.drain_all();
        *queues = WorkQueues::new(&SchedulerConfig {
            policy,
            workers: s.workers,
            tree_arity: s.tree_arity,
        });
        let moved = staged.len();
        for (i, t) in staged.into_iter().enumerate() {
            queues.enqueue(t, i % s.workers);
        }
        drop(queues);
        s.unpark_all();
        log::debug!("scheduling policy switched to {policy}, {moved} tasks redistributed");
        moved
    }

    pub fn stats(&self) -> StealStats {
        let s = &self.shared;
        let spawned = s.spawned.load(Ordering::SeqCst);
        StealStats {
            workers: s.stats.iter().map(WorkerStats::snapshot).collect(),
            spawned,
            discarded: s.report.lock().map(|r| r.discarded).unwrap_or(0),
        }
    }

    /// Tasks waiting in each worker's own queues.
    pub fn queue_lengths(&self) -> Vec<usize> {
        let q = self.shared.queues.read();
        (0..self.shared.workers).map(|w| q.worker_len(w)).collect()
    }

    pub fn queue_len(&self, id: QueueId) -> usize {
        self.shared.queues.read().queue_len(id)
    }

    /// Total number of queues (tree nodes for the hierarchical policy).
    pub fn queue_count(&self) -> usize {
        self.shared.queues.read().node_count()
    }

    /// Root of the hierarchical tree, when that policy is active.
    pub fn root_queue(&self) -> Option<QueueId> {
        self.shared.queues.read().root()
    }

    /// Tasks that are queued or running right now.
    pub fn pending(&self) -> usize {
        self.shared.queued.load(Ordering::SeqCst) + self.shared.active.load(Ordering::SeqCst)
    }

    /// Stops the workers. With `drain`, every queued task runs first;
    /// otherwise queued tasks are dropped. Idempotent.
    pub fn shutdown(&self, drain: bool) -> ShutdownReport {
        let s = &self.shared;
        let mut report = s.report.lock();
        if let Some(r) = *report {
            return r;
        }
        let _ = s.state.compare_exchange(
            RUNNING,
            if drain { DRAINING } else { STOPPED },
            Ordering::SeqCst,
            Ordering::SeqCst,
        );
        s.unpark_all();
        let me = self.current_worker();
        let handles: Vec<_> = s.handles.lock().drain(..).collect();
        for (w, h) in handles.into_iter().enumerate() {
            if Some(w) != me {
                let _ = h.join();
            }
        }
        s.state.store(STOPPED, Ordering::SeqCst);
        let leftover = s.queues.read().drain_all();
        s.queued.fetch_sub(leftover.len(), Ordering::SeqCst);
        let r = ShutdownReport {
            discarded: s.spawned.load(Ordering::SeqCst) - s.terminated.load(Ordering::SeqCst),
        };
        *report = Some(r);
        drop(report);
        // dropping a task may run completion code; keep it outside the lock
        drop(leftover);
        r
    }
}

impl Shared {
    fn pick_target(&self, hint: Option<usize>) -> usize {
        if let Some(h) = hint {
            return h;
        }
        let own = WORKER.with(|w| match &*w.borrow() {
            Some((s, idx)) if s.id == self.id => Some(*idx),
            _ => None,
        });
        own.unwrap_or_else(|| self.round_robin.fetch_add(1, Ordering::Relaxed) % self.workers)
    }

    fn enqueue(&self, task: Task, hint: Option<usize>) {
        let target = self.pick_target(hint);
        self.queued.fetch_add(1, Ordering::SeqCst);
        let policy = {
            let q = self.queues.read();
            q.enqueue(task, target);
            q.policy()
        };
        if self.state.load(Ordering::SeqCst) == STOPPED {
            // raced with shutdown: nobody will run it
            let late = self.queues.read().drain_all();
            self.queued.fetch_sub(late.len(), Ordering::SeqCst);
            return;
        }
        match policy {
            Policy::Static => self.unpark(target),
            Policy::LocalPriority => {
                self.unpark(target);
                self.unpark_any_sleeper();
            }
            Policy::Hierarchical => self.unpark_any_sleeper(),
        }
    }

    /// Re-enqueues a woken task.
    pub(crate) fn requeue(&self, task: Task) {
        if self.state.load(Ordering::SeqCst) == STOPPED {
            return;
        }
        self.enqueue(task, None);
    }

    fn unpark(&self, w: usize) {
        if self.sleeping[w].load(Ordering::SeqCst) {
            if let Some(t) = self.threads.lock().get(w) {
                t.unpark();
            }
        }
    }

    fn unpark_any_sleeper(&self) {
        if let Some(w) = self.sleeping.iter().position(|s| s.load(Ordering::SeqCst)) {
            self.unpark(w);
        }
    }

    fn unpark_all(&self) {
        for t in self.threads.lock().iter() {
            t.unpark();
        }
    }

    fn run_one(&self, w: usize) -> bool {
        self.active.fetch_add(1, Ordering::SeqCst);
        let task = self.queues.read().next_task(w, &self.stats);
        let Some(task) = task else {
            self.active.fetch_sub(1, Ordering::SeqCst);
            return false;
        };
        self.queued.fetch_sub(1, Ordering::SeqCst);
        if task.poll_once(Some(w)) == TaskState::Terminated {
            self.stats[w].record_executed();
            self.terminated.fetch_add(1, Ordering::SeqCst);
        }
        self.active.fetch_sub(1, Ordering::SeqCst);
        true
    }
}

fn worker_main(shared: Arc<Shared>, w: usize) {
    WORKER.with(|c| *c.borrow_mut() = Some((shared.clone(), w)));
    let mut idle: u32 = 0;
    loop {
        let state = shared.state.load(Ordering::SeqCst);
        if state == STOPPED {
            break;
        }
        if shared.run_one(w) {
            idle = 0;
            continue;
        }
        if state == DRAINING
            && shared.queued.load(Ordering::SeqCst) == 0
            && shared.active.load(Ordering::SeqCst) == 0
        {
            break;
        }
        idle = idle.saturating_add(1);
        if idle <= SPIN_ATTEMPTS {
            std::hint::spin_loop();
            thread::yield_now();
        } else {
            let exp = (idle - SPIN_ATTEMPTS).min(10);
            let nap = Duration::from_micros(1 << exp).min(MAX_PARK);
            shared.sleeping[w].store(true, Ordering::SeqCst);
            thread::park_timeout(nap);
            shared.sleeping[w].store(false, Ordering::SeqCst);
        }
    }
    WORKER.with(|c| c.borrow_mut().take());
}
