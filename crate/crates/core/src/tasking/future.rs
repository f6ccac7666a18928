//! Single-assignment futures with continuations.

use std::fmt;
use std::pin::Pin;
use std::sync::Arc;
use std::task::{Context, Poll, Waker};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};
use crate::scheduler::{current_task, Priority, Scheduler, WeakScheduler};

type Callback<T> = Box<dyn FnOnce(&Result<T>) + Send>;

struct State<T> {
    result: Option<Arc<Result<T>>>,
    callbacks: Vec<Callback<T>>,
    wakers: Vec<Waker>,
}

struct Shared<T> {
    state: Mutex<State<T>>,
    cond: Condvar,
    exec: WeakScheduler,
}

/// Shared, single-assignment result cell.
///
/// A future completes exactly once, with a value or an error. Any number of
/// handles may observe it; continuations attached with [`Future::then`]
/// run as fresh tasks on the scheduler the future belongs to.
pub struct Future<T> {
    shared: Arc<Shared<T>>,
}

/// The writing side of a [`Future`].
///
/// Dropping a promise that was never satisfied completes its future with
/// [`Error::BrokenPromise`].
pub struct Promise<T: Send + Sync + 'static> {
    shared: Arc<Shared<T>>,
    on_drop: Error,
}

impl<T> Clone for Future<T> {
    fn clone(&self) -> Self {
        Future {
            shared: self.shared.clone(),
        }
    }
}

impl<T> fmt::Debug for Future<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.shared.state.lock();
        let state = match st.result.as_deref() {
            None => "empty",
            Some(Ok(_)) => "value",
            Some(Err(_)) => "error",
        };
        f.debug_struct("Future").field("state", &state).finish()
    }
}

fn new_shared<T>(exec: WeakScheduler, result: Option<Result<T>>) -> Arc<Shared<T>> {
    Arc::new(Shared {
        state: Mutex::new(State {
            result: result.map(Arc::new),
            callbacks: Vec::new(),
            wakers: Vec::new(),
        }),
        cond: Condvar::new(),
        exec,
    })
}

fn ambient_exec() -> WeakScheduler {
    Scheduler::current()
        .map(|s| s.downgrade())
        .unwrap_or_default()
}

/// Creates a connected promise/future pair bound to the scheduler of the
/// calling worker, if any.
pub fn promise<T: Send + Sync + 'static>() -> (Promise<T>, Future<T>) {
    pair_with(ambient_exec())
}

pub(crate) fn pair_with<T: Send + Sync + 'static>(exec: WeakScheduler) -> (Promise<T>, Future<T>) {
    let shared = new_shared(exec, None);
    (
        Promise {
            shared: shared.clone(),
            on_drop: Error::BrokenPromise,
        },
        Future { shared },
    )
}

/// A future that already holds `v`.
pub fn make_ready_future<T: Send + Sync + 'static>(v: T) -> Future<T> {
    Future::ready(v)
}

impl<T: Send + Sync + 'static> Promise<T> {
    pub(crate) fn with_drop_error(mut self, e: Error) -> Self {
        self.on_drop = e;
        self
    }

    pub fn future(&self) -> Future<T> {
        Future {
            shared: self.shared.clone(),
        }
    }

    pub fn set_value(&self, v: T) -> Result<()> {
        self.set_result(Ok(v))
    }

    pub fn set_error(&self, e: Error) -> Result<()> {
        self.set_result(Err(e))
    }

    /// Completes the future. A second completion is rejected with
    /// [`Error::AlreadySatisfied`] and leaves the first result in place.
    pub fn set_result(&self, r: Result<T>) -> Result<()> {
        complete(&self.shared, r)
    }

    pub fn is_satisfied(&self) -> bool {
        self.shared.state.lock().result.is_some()
    }
}

impl<T: Send + Sync + 'static> Drop for Promise<T> {
    fn drop(&mut self) {
        if !self.is_satisfied() {
            let _ = complete(&self.shared, Err(self.on_drop.clone()));
        }
    }
}

fn complete<T>(shared: &Shared<T>, r: Result<T>) -> Result<()> {
    let r = Arc::new(r);
    let (callbacks, wakers) = {
        let mut st = shared.state.lock();
        if st.result.is_some() {
            return Err(Error::AlreadySatisfied);
        }
        st.result = Some(r.clone());
        (
            std::mem::take(&mut st.callbacks),
            std::mem::take(&mut st.wakers),
        )
    };
    shared.cond.notify_all();
    for cb in callbacks {
        cb(&r);
    }
    for w in wakers {
        w.wake();
    }
    Ok(())
}

impl<T: Send + Sync + 'static> Future<T> {
    pub fn ready(v: T) -> Future<T> {
        Future {
            shared: new_shared(ambient_exec(), Some(Ok(v))),
        }
    }

    pub fn failed(e: Error) -> Future<T> {
        Future {
            shared: new_shared(ambient_exec(), Some(Err(e))),
        }
    }

    pub(crate) fn from_result(r: Result<T>) -> Future<T> {
        Future {
            shared: new_shared(ambient_exec(), Some(r)),
        }
    }

    pub fn is_ready(&self) -> bool {
        self.shared.state.lock().result.is_some()
    }

    /// Runs `cb` on the completing thread once a result exists, or
    /// immediately if it already does. Internal plumbing only: `cb` must be
    /// short and must not block.
    pub(crate) fn on_complete<F>(&self, cb: F)
    where
        F: FnOnce(&Result<T>) + Send + 'static,
    {
        let ready = {
            let mut st = self.shared.state.lock();
            match &st.result {
                Some(r) => r.clone(),
                None => {
                    st.callbacks.push(Box::new(cb));
                    return;
                }
            }
        };
        cb(&ready);
    }

    pub(crate) fn scheduler(&self) -> Option<Scheduler> {
        self.shared.exec.upgrade().or_else(Scheduler::current)
    }

    /// Runs `cont` as a new task once this future holds a value. An error
    /// skips `cont` and flows into the returned future.
    pub fn then<U, F>(&self, cont: F) -> Future<U>
    where
        U: Send + Sync + 'static,
        T: Clone,
        F: FnOnce(T) -> U + Send + 'static,
    {
        self.and_then(move |v| Ok(cont(v)))
    }

    /// Like [`Future::then`] for continuations that can fail.
    pub fn and_then<U, F>(&self, cont: F) -> Future<U>
    where
        U: Send + Sync + 'static,
        T: Clone,
        F: FnOnce(T) -> Result<U> + Send + 'static,
    {
        let sched = self.scheduler();
        let exec = sched.as_ref().map(|s| s.downgrade()).unwrap_or_default();
        let (p, f) = pair_with::<U>(exec);
        self.on_complete(move |r| {
            let r = r.clone();
            let priority = current_task().map(|t| t.priority).unwrap_or(Priority::Normal);
            let run = move || {
                let out = match r {
                    Ok(v) => super::catch(move || cont(v)),
                    Err(e) => Err(e),
                };
                let _ = p.set_result(out);
            };
            match sched {
                Some(s) => {
                    // a rejected submission drops `run`, which drops the
                    // promise and surfaces the failure
                    let _ = s.submit_fn(priority, None, run);
                }
                None => run(),
            }
        });
        f
    }

    pub fn try_get(&self) -> Option<Result<T>>
    where
        T: Clone,
    {
        self.shared
            .state
            .lock()
            .result
            .as_deref()
            .cloned()
    }

    /// Waits for the result.
    ///
    /// On a worker thread the worker keeps executing other tasks while it
    /// waits; elsewhere the calling thread is parked.
    pub fn get(&self) -> Result<T>
    where
        T: Clone,
    {
        self.wait_until(None)
            .expect("untimed wait always yields a result")
    }

    /// As [`Future::get`], giving up after `timeout`.
    pub fn wait_timeout(&self, timeout: Duration) -> Option<Result<T>>
    where
        T: Clone,
    {
        self.wait_until(Some(Instant::now() + timeout))
    }

    fn wait_until(&self, deadline: Option<Instant>) -> Option<Result<T>>
    where
        T: Clone,
    {
        if let Some(r) = self.try_get() {
            return Some(r);
        }
        if let Some(sched) = Scheduler::current() {
            if let Some(w) = sched.current_worker() {
                return self.help_until(&sched, w, deadline);
            }
        }
        let mut st = self.shared.state.lock();
        loop {
            if let Some(r) = st.result.as_deref() {
                return Some(r.clone());
            }
            match deadline {
                None => self.shared.cond.wait(&mut st),
                Some(d) => {
                    if self.shared.cond.wait_until(&mut st, d).timed_out() {
                        return st.result.as_deref().cloned();
                    }
                }
            }
        }
    }

    fn help_until(&self, sched: &Scheduler, w: usize, deadline: Option<Instant>) -> Option<Result<T>>
    where
        T: Clone,
    {
        let mut idle = 0u32;
        loop {
            if let Some(r) = self.try_get() {
                return Some(r);
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return None;
            }
            if sched.run_one(w) {
                idle = 0;
            } else {
                idle = idle.saturating_add(1);
                if idle < 64 {
                    std::thread::yield_now();
                } else {
                    std::thread::park_timeout(Duration::from_micros(100));
                }
            }
        }
    }
}

impl<T: Clone + Send + Sync + 'static> Future<Future<T>> {
    /// Collapses a future of a future.
    pub fn flatten(&self) -> Future<T> {
        let (p, f) = pair_with::<T>(self.shared.exec.clone());
        self.on_complete(move |outer| match outer {
            Ok(inner) => inner.on_complete(move |r| {
                let _ = p.set_result(r.clone());
            }),
            Err(e) => {
                let _ = p.set_error(e.clone());
            }
        });
        f
    }
}

impl<T: Clone + Send + Sync + 'static> std::future::Future for Future<T> {
    type Output = Result<T>;

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Result<T>> {
        let mut st = self.shared.state.lock();
        if let Some(r) = st.result.as_deref() {
            return Poll::Ready(r.clone());
        }
        if !st.wakers.iter().any(|w| w.will_wake(cx.waker())) {
            st.wakers.push(cx.waker().clone());
        }
        Poll::Pending
    }
}
