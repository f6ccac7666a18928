//! Queue layouts for the three scheduling policies.
//!
//! * `Static`: one FIFO queue per worker, no stealing.
//! * `LocalPriority`: per worker a normal deque and a high-priority deque.
//!   The owner pops its normal deque newest-first; thieves visit the other
//!   workers in ring order (w+1, w+2, ...) and take the oldest task,
//!   high-priority deque first.
//! * `Hierarchical`: a tree of queues with one leaf per worker. New work
//!   always enters at the root and trickles down towards the leaf of the
//!   worker that asks for it.

use std::collections::VecDeque;

use parking_lot::Mutex;

use super::stats::WorkerStats;
use super::task::{Priority, Task};
use super::{Policy, SchedulerConfig};

/// Identifies a queue, for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueueId {
    /// Normal queue of a worker (static and local-priority policies).
    Worker(usize),
    /// High-priority queue of a worker (local-priority policy).
    HighPriority(usize),
    /// Node of the hierarchical tree, by index. The root is the last node.
    Node(usize),
}

type Deque = Mutex<VecDeque<Task>>;

fn deques(n: usize) -> Vec<Deque> {
    (0..n).map(|_| Mutex::new(VecDeque::new())).collect()
}

#[derive(Debug)]
pub(crate) struct HierarchyNode {
    pub(crate) queue: Deque,
    pub(crate) parent: Option<usize>,
    // only the shape tests walk downwards
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) children: Vec<usize>,
}

/// Tree of queues. Nodes `0..workers` are the leaves; the root is the last.
#[derive(Debug)]
pub(crate) struct Hierarchy {
    pub(crate) nodes: Vec<HierarchyNode>,
    pub(crate) arity: usize,
}

impl Hierarchy {
    pub(crate) fn new(workers: usize, arity: usize) -> Hierarchy {
        let mut nodes: Vec<HierarchyNode> = (0..workers)
            .map(|_| HierarchyNode {
                queue: Mutex::new(VecDeque::new()),
                parent: None,
                children: Vec::new(),
            })
            .collect();
        let mut level: Vec<usize> = (0..workers).collect();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(arity));
            for group in level.chunks(arity) {
                let id = nodes.len();
                for &child in group {
                    nodes[child].parent = Some(id);
                }
                nodes.push(HierarchyNode {
                    queue: Mutex::new(VecDeque::new()),
                    parent: None,
                    children: group.to_vec(),
                });
                next.push(id);
            }
            level = next;
        }
        Hierarchy { nodes, arity }
    }

    pub(crate) fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Moves `min(len, max(1, len / arity))` tasks from the front of `node`
    /// to the back of `child`, preserving order. Returns the number moved.
    pub(crate) fn trickle_down(&self, node: usize, child: usize) -> usize {
        debug_assert_eq!(self.nodes[child].parent, Some(node));
        let batch: Vec<Task> = {
            let mut q = self.nodes[node].queue.lock();
            let n = q.len().min((q.len() / self.arity).max(1));
            q.drain(..n).collect()
        };
        let moved = batch.len();
        if moved > 0 {
            self.nodes[child].queue.lock().extend(batch);
        }
        moved
    }

    fn path_to_root(&self, leaf: usize) -> Vec<usize> {
        let mut path = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path
    }

    fn next_task(&self, worker: usize, stats: &WorkerStats) -> Option<Task> {
        if let Some(t) = self.nodes[worker].queue.lock().pop_front() {
            return Some(t);
        }
        let path = self.path_to_root(worker);
        // lowest ancestor with work
        let start = (1..path.len()).find(|&i| !self.nodes[path[i]].queue.lock().is_empty())?;
        for i in (1..=start).rev() {
            if self.trickle_down(path[i], path[i - 1]) == 0 {
                break;
            }
        }
        let t = self.nodes[worker].queue.lock().pop_front();
        if t.is_some() {
            stats.record_leaf_fetch();
        }
        t
    }
}

#[derive(Debug)]
pub(crate) enum WorkQueues {
    Static {
        queues: Vec<Deque>,
    },
    LocalPriority {
        normal: Vec<Deque>,
        high: Vec<Deque>,
    },
    Hierarchical(Hierarchy),
}

impl WorkQueues {
    pub(crate) fn new(cfg: &SchedulerConfig) -> WorkQueues {
        match cfg.policy {
            Policy::Static => WorkQueues::Static {
                queues: deques(cfg.workers),
            },
            Policy::LocalPriority => WorkQueues::LocalPriority {
                normal: deques(cfg.workers),
                high: deques(cfg.workers),
            },
            Policy::Hierarchical => {
                WorkQueues::Hierarchical(Hierarchy::new(cfg.workers, cfg.tree_arity))
            }
        }
    }

    pub(crate) fn policy(&self) -> Policy {
        match self {
            WorkQueues::Static { .. } => Policy::Static,
            WorkQueues::LocalPriority { .. } => Policy::LocalPriority,
            WorkQueues::Hierarchical(_) => Policy::Hierarchical,
        }
    }

    /// Places `task`. `target` is the worker chosen by the caller; the
    /// hierarchical policy ignores it. Returns the queue used.
    pub(crate) fn enqueue(&self, task: Task, target: usize) -> QueueId {
        let high = task.priority() == Priority::High;
        let (qid, deque) = match self {
            WorkQueues::Static { queues } => (QueueId::Worker(target), &queues[target]),
            WorkQueues::LocalPriority { normal, high: hp } => {
                if high {
                    (QueueId::HighPriority(target), &hp[target])
                } else {
                    (QueueId::Worker(target), &normal[target])
                }
            }
            WorkQueues::Hierarchical(h) => {
                let root = h.root();
                (QueueId::Node(root), &h.nodes[root].queue)
            }
        };
        task.0.first_queue.get_or_init(|| qid);
        let mut q = deque.lock();
        // in FIFO queues a high-priority task jumps the line; the
        // local-priority policy has a dedicated deque instead
        if high && !matches!(self, WorkQueues::LocalPriority { .. }) {
            q.push_front(task);
        } else {
            q.push_back(task);
        }
        qid
    }

    /// Next task for `worker`, following the policy's search order.
    pub(crate) fn next_task(&self, worker: usize, stats: &[WorkerStats]) -> Option<Task> {
        match self {
            WorkQueues::Static { queues } => queues[worker].lock().pop_front(),
            WorkQueues::LocalPriority { normal, high } => {
                if let Some(t) = high[worker].lock().pop_front() {
                    return Some(t);
                }
                if let Some(t) = normal[worker].lock().pop_back() {
                    return Some(t);
                }
                let n = normal.len();
                for k in 1..n {
                    let victim = (worker + k) % n;
                    stats[worker].record_steal_attempt();
                    let stolen = high[victim]
                        .lock()
                        .pop_front()
                        .or_else(|| normal[victim].lock().pop_front());
                    if stolen.is_some() {
                        stats[worker].record_steal_success();
                        return stolen;
                    }
                }
                None
            }
            WorkQueues::Hierarchical(h) => h.next_task(worker, &stats[worker]),
        }
    }

    /// Removes every queued task, worker by worker, oldest first.
    pub(crate) fn drain_all(&self) -> Vec<Task> {
        let mut out = Vec::new();
        match self {
            WorkQueues::Static { queues } => {
                for q in queues {
                    out.extend(q.lock().drain(..));
                }
            }
            WorkQueues::LocalPriority { normal, high } => {
                for (hq, nq) in high.iter().zip(normal) {
                    out.extend(hq.lock().drain(..));
                    out.extend(nq.lock().drain(..));
                }
            }
            WorkQueues::Hierarchical(h) => {
                // root first so that older work stays ahead
                for node in h.nodes.iter().rev() {
                    out.extend(node.queue.lock().drain(..));
                }
            }
        }
        out
    }

    /// Number of tasks waiting in `worker`'s own queues.
    pub(crate) fn worker_len(&self, worker: usize) -> usize {
        match self {
            WorkQueues::Static { queues } => queues[worker].lock().len(),
            WorkQueues::LocalPriority { normal, high } => {
                normal[worker].lock().len() + high[worker].lock().len()
            }
            WorkQueues::Hierarchical(h) => h.nodes[worker].queue.lock().len(),
        }
    }

    pub(crate) fn queue_len(&self, id: QueueId) -> usize {
        match (self, id) {
            (WorkQueues::Static { queues }, QueueId::Worker(w)) => queues[w].lock().len(),
            (WorkQueues::LocalPriority { normal, .. }, QueueId::Worker(w)) => normal[w].lock().len(),
            (WorkQueues::LocalPriority { high, .. }, QueueId::HighPriority(w)) => high[w].lock().len(),
            (WorkQueues::Hierarchical(h), QueueId::Node(n)) => h.nodes[n].queue.lock().len(),
            _ => 0,
        }
    }

    pub(crate) fn node_count(&self) -> usize {
        match self {
            WorkQueues::Static { queues } => queues.len(),
            WorkQueues::LocalPriority { normal, high } => normal.len() + high.len(),
            WorkQueues::Hierarchical(h) => h.nodes.len(),
        }
    }

    pub(crate) fn root(&self) -> Option<QueueId> {
        match self {
            WorkQueues::Hierarchical(h) => Some(QueueId::Node(h.root())),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Weak;

    fn cfg(policy: Policy, workers: usize) -> SchedulerConfig {
        SchedulerConfig {
            policy,
            workers,
            tree_arity: 2,
        }
    }

    fn task(id: u64, priority: Priority) -> Task {
        Task::new(id, priority, Box::pin(async {}), Weak::new())
    }

    fn stats(n: usize) -> Vec<WorkerStats> {
        (0..n).map(|_| WorkerStats::default()).collect()
    }

    #[test]
    fn binary_tree_over_four_workers_has_seven_nodes() {
        let h = Hierarchy::new(4, 2);
        assert_eq!(h.nodes.len(), 7);
        assert_eq!(h.nodes.iter().filter(|n| n.children.is_empty()).count(), 4);
        assert_eq!(h.nodes[h.root()].parent, None);
        assert_eq!(h.nodes[h.root()].children.len(), 2);
    }

    #[test]
    fn tree_shapes() {
        assert_eq!(Hierarchy::new(1, 2).nodes.len(), 1);
        assert_eq!(Hierarchy::new(3, 2).nodes.len(), 6);
        assert_eq!(Hierarchy::new(9, 3).nodes.len(), 13);
        let h = Hierarchy::new(5, 4);
        // every leaf reaches the root
        for leaf in 0..5 {
            assert_eq!(*h.path_to_root(leaf).last().unwrap(), h.root());
        }
    }

    #[test]
    fn static_hint_places_in_that_queue_only() {
        let q = WorkQueues::new(&cfg(Policy::Static, 4));
        assert_eq!(q.node_count(), 4);
        q.enqueue(task(1, Priority::Normal), 2);
        for w in 0..4 {
            assert_eq!(q.worker_len(w), usize::from(w == 2));
        }
    }

    #[test]
    fn static_never_steals() {
        let q = WorkQueues::new(&cfg(Policy::Static, 2));
        let st = stats(2);
        q.enqueue(task(1, Priority::Normal), 1);
        assert!(q.next_task(0, &st).is_none());
        assert_eq!(st[0].snapshot().steal_attempts, 0);
        assert_eq!(q.next_task(1, &st).unwrap().id(), 1);
    }

    #[test]
    fn high_priority_goes_to_hp_queue() {
        let q = WorkQueues::new(&cfg(Policy::LocalPriority, 2));
        let qid = q.enqueue(task(1, Priority::High), 1);
        assert_eq!(qid, QueueId::HighPriority(1));
        assert_eq!(q.queue_len(QueueId::HighPriority(1)), 1);
        assert_eq!(q.queue_len(QueueId::Worker(1)), 0);
    }

    #[test]
    fn owner_pops_newest_first() {
        let q = WorkQueues::new(&cfg(Policy::LocalPriority, 2));
        let st = stats(2);
        q.enqueue(task(1, Priority::Normal), 0); // A, old
        q.enqueue(task(2, Priority::Normal), 0); // B, new
        assert_eq!(q.next_task(0, &st).unwrap().id(), 2);
    }

    #[test]
    fn thief_takes_oldest_from_ring_neighbour() {
        let q = WorkQueues::new(&cfg(Policy::LocalPriority, 3));
        let st = stats(3);
        q.enqueue(task(1, Priority::Normal), 1);
        q.enqueue(task(2, Priority::Normal), 1);
        q.enqueue(task(3, Priority::Normal), 2);
        let stolen = q.next_task(0, &st).unwrap();
        assert_eq!(stolen.id(), 1, "w+1 is probed first and gives its oldest task");
        let s = st[0].snapshot();
        assert_eq!((s.steal_attempts, s.steals_succeeded), (1, 1));
    }

    #[test]
    fn single_worker_cannot_steal() {
        let q = WorkQueues::new(&cfg(Policy::LocalPriority, 1));
        let st = stats(1);
        assert!(q.next_task(0, &st).is_none());
        assert_eq!(st[0].snapshot().steal_attempts, 0);
    }

    #[test]
    fn hp_before_normal_on_one_worker() {
        for policy in [Policy::Static, Policy::LocalPriority, Policy::Hierarchical] {
            let q = WorkQueues::new(&cfg(policy, 1));
            let st = stats(1);
            q.enqueue(task(1, Priority::Normal), 0);
            q.enqueue(task(2, Priority::High), 0);
            q.enqueue(task(3, Priority::Normal), 0);
            let order: Vec<u64> = std::iter::from_fn(|| q.next_task(0, &st).map(|t| t.id())).collect();
            let pos = |id| order.iter().position(|&x| x == id).unwrap();
            assert!(pos(2) < pos(3), "{policy:?}: {order:?}");
            assert_eq!(order.len(), 3);
        }
    }

    #[test]
    fn hierarchical_enqueues_at_root_regardless_of_hint() {
        let q = WorkQueues::new(&cfg(Policy::Hierarchical, 4));
        let root = q.root().unwrap();
        for hint in 0..4 {
            assert_eq!(q.enqueue(task(hint as u64, Priority::Normal), hint), root);
        }
        assert_eq!(q.queue_len(root), 4);
    }

    #[test]
    fn trickle_batches() {
        let h = Hierarchy::new(4, 2);
        let root = h.root();
        let child = h.nodes[root].children[0];
        for i in 0..8 {
            h.nodes[root].queue.lock().push_back(task(i, Priority::Normal));
        }
        assert_eq!(h.trickle_down(root, child), 4);
        let ids: Vec<u64> = h.nodes[child].queue.lock().iter().map(|t| t.id()).collect();
        assert_eq!(ids, vec![0, 1, 2, 3], "FIFO order preserved");

        let h = Hierarchy::new(4, 2);
        let root = h.root();
        let child = h.nodes[root].children[1];
        h.nodes[root].queue.lock().push_back(task(9, Priority::Normal));
        assert_eq!(h.trickle_down(root, child), 1);
        assert_eq!(h.trickle_down(root, child), 0);
    }

    #[test]
    fn hierarchical_leaf_pulls_through_the_tree() {
        let q = WorkQueues::new(&cfg(Policy::Hierarchical, 4));
        let st = stats(4);
        assert!(q.next_task(3, &st).is_none());
        for i in 0..8 {
            q.enqueue(task(i, Priority::Normal), 0);
        }
        // root 8 -> child 4 -> leaf 2
        assert_eq!(q.next_task(3, &st).unwrap().id(), 0);
        assert_eq!(q.worker_len(3), 1);
        assert_eq!(st[3].snapshot().leaf_fetches, 1);
        let mut seen = 1;
        for w in (0..4).cycle().take(64) {
            if q.next_task(w, &st).is_some() {
                seen += 1;
            }
        }
        assert_eq!(seen, 8);
    }

    #[test]
    fn drain_collects_everything() {
        for policy in [Policy::Static, Policy::LocalPriority, Policy::Hierarchical] {
            let q = WorkQueues::new(&cfg(policy, 3));
            for i in 0..30 {
                let prio = if i % 5 == 0 { Priority::High } else { Priority::Normal };
                q.enqueue(task(i, prio), (i % 3) as usize);
            }
            let mut ids: Vec<u64> = q.drain_all().iter().map(|t| t.id()).collect();
            ids.sort_unstable();
            assert_eq!(ids, (0..30).collect::<Vec<_>>());
            assert_eq!((0..3).map(|w| q.worker_len(w)).sum::<usize>(), 0);
        }
    }
}
