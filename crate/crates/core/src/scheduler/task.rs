use std::cell::Cell;
use std::fmt;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, AtomicU8, Ordering};
use std::sync::{Arc, OnceLock, Weak};
use std::task::{Context, Poll, Wake, Waker};

use parking_lot::Mutex;

use super::queues::QueueId;
use super::Shared;

pub type TaskId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Priority {
    High,
    #[default]
    Normal,
}

/// Lifecycle of a task.
///
/// Legal edges: pending→active, active→suspended, suspended→pending,
/// active→terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TaskState {
    Pending = 0,
    Active = 1,
    Suspended = 2,
    Terminated = 3,
}

impl TaskState {
    fn from_u8(v: u8) -> TaskState {
        match v {
            0 => TaskState::Pending,
            1 => TaskState::Active,
            2 => TaskState::Suspended,
            _ => TaskState::Terminated,
        }
    }

    pub fn can_transition_to(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Pending, Active) | (Active, Suspended) | (Suspended, Pending) | (Active, Terminated)
        )
    }
}

pub(crate) type Work = Pin<Box<dyn std::future::Future<Output = ()> + Send>>;

/// A lightweight unit of work.
///
/// Tasks are stackless: a task whose work is waiting on a future returns to
/// its worker in the suspended state and is requeued when woken.
pub struct Task(pub(crate) Arc<TaskCell>);

pub(crate) struct TaskCell {
    pub(crate) id: TaskId,
    pub(crate) priority: Priority,
    state: AtomicU8,
    notified: AtomicBool,
    pub(crate) first_queue: OnceLock<QueueId>,
    work: Mutex<Option<Work>>,
    sched: Weak<Shared>,
}

impl fmt::Debug for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Task")
            .field("id", &self.0.id)
            .field("priority", &self.0.priority)
            .field("state", &self.state())
            .finish()
    }
}

impl Task {
    pub(crate) fn new(id: TaskId, priority: Priority, work: Work, sched: Weak<Shared>) -> Task {
        Task(Arc::new(TaskCell {
            id,
            priority,
            state: AtomicU8::new(TaskState::Pending as u8),
            notified: AtomicBool::new(false),
            first_queue: OnceLock::new(),
            work: Mutex::new(Some(work)),
            sched,
        }))
    }

    pub fn id(&self) -> TaskId {
        self.0.id
    }

    pub fn priority(&self) -> Priority {
        self.0.priority
    }

    pub fn state(&self) -> TaskState {
        TaskState::from_u8(self.0.state.load(Ordering::SeqCst))
    }

    /// First queue this task was placed in, if it has been enqueued.
    pub fn first_queue(&self) -> Option<QueueId> {
        self.0.first_queue.get().copied()
    }

    /// Polls the task once on the current thread. Returns the state the task
    /// was left in.
    pub(crate) fn poll_once(&self, worker: Option<usize>) -> TaskState {
        let cell = &self.0;
        let moved = cell.transition(TaskState::Pending, TaskState::Active);
        debug_assert!(moved, "task {} polled while not pending", cell.id);
        cell.notified.store(false, Ordering::SeqCst);

        let info = TaskInfo {
            id: cell.id,
            priority: cell.priority,
            first_queue: cell.first_queue.get().copied(),
            worker,
        };
        let prev = CURRENT_TASK.with(|c| c.replace(Some(info)));

        let waker = Waker::from(self.0.clone());
        let mut cx = Context::from_waker(&waker);
        let mut slot = cell.work.lock();
        let done = match slot.as_mut() {
            Some(work) => {
                match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    work.as_mut().poll(&mut cx)
                })) {
                    Ok(Poll::Ready(())) => true,
                    Ok(Poll::Pending) => false,
                    Err(_) => {
                        log::error!("task {} panicked outside its promise guard", cell.id);
                        true
                    }
                }
            }
            None => true,
        };
        let finished = if done { slot.take() } else { None };
        drop(slot);
        // drop the work without holding the lock; its destructors may
        // complete promises
        drop(finished);
        CURRENT_TASK.with(|c| c.set(prev));

        if done {
            cell.state
                .store(TaskState::Terminated as u8, Ordering::SeqCst);
            TaskState::Terminated
        } else {
            cell.state.store(TaskState::Suspended as u8, Ordering::SeqCst);
            if cell.notified.swap(false, Ordering::SeqCst)
                && cell.transition(TaskState::Suspended, TaskState::Pending)
            {
                cell.requeue(Task(self.0.clone()));
                return TaskState::Pending;
            }
            TaskState::Suspended
        }
    }
}

impl TaskCell {
    fn transition(&self, from: TaskState, to: TaskState) -> bool {
        debug_assert!(from.can_transition_to(to));
        self.state
            .compare_exchange(from as u8, to as u8, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }

    fn requeue(&self, task: Task) {
        match self.sched.upgrade() {
            Some(sched) => sched.requeue(task),
            None => log::debug!("task {} woken after its scheduler was dropped", self.id),
        }
    }
}

impl Wake for TaskCell {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref()
    }

    fn wake_by_ref(self: &Arc<Self>) {
        match TaskState::from_u8(self.state.load(Ordering::SeqCst)) {
            TaskState::Active => {
                self.notified.store(true, Ordering::SeqCst);
                // the poller may have parked the task in between
                if self.state.load(Ordering::SeqCst) == TaskState::Suspended as u8
                    && self.transition(TaskState::Suspended, TaskState::Pending)
                {
                    self.requeue(Task(self.clone()));
                }
            }
            TaskState::Suspended => {
                if self.transition(TaskState::Suspended, TaskState::Pending) {
                    self.requeue(Task(self.clone()));
                }
            }
            TaskState::Pending | TaskState::Terminated => {}
        }
    }
}

/// Snapshot of the task running on the current thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskInfo {
    pub id: TaskId,
    pub priority: Priority,
    pub first_queue: Option<QueueId>,
    /// Worker index executing the task.
    pub worker: Option<usize>,
}

thread_local! {
    static CURRENT_TASK: Cell<Option<TaskInfo>> = const { Cell::new(None) };
}

/// The task currently executing on this thread, if any.
pub fn current_task() -> Option<TaskInfo> {
    CURRENT_TASK.with(|c| c.get())
}
