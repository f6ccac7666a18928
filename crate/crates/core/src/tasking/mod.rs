//! Lightweight-task API: spawning, futures, continuations, composition,
//! channels and a parallel loop, all layered on a [`Scheduler`].

mod channel;
mod combinators;
mod future;

use std::any::Any;
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::error::{Error, Result};
use crate::scheduler::{Priority, Scheduler};

pub use channel::Channel;
pub use combinators::{dataflow, parallel_for, parallel_for_chunked, when_all, DEFAULT_CHUNKS_PER_WORKER};
pub use future::{make_ready_future, promise, Future, Promise};

pub(crate) use future::pair_with;

pub(crate) fn panic_message(p: Box<dyn Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Runs `f`, turning a panic into [`Error::Panicked`].
pub(crate) fn catch<U>(f: impl FnOnce() -> Result<U>) -> Result<U> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(Error::Panicked(panic_message(p))))
}

/// Options for [`spawn_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SpawnOptions {
    pub priority: Priority,
    /// Worker to place the task on (static and local-priority policies).
    pub worker: Option<usize>,
}

/// Runs `work` as a new task and returns a future for its value. The caller
/// never blocks. A panic inside `work` completes the future with
/// [`Error::Panicked`].
pub fn spawn<T, F>(sched: &Scheduler, work: F) -> Future<T>
where
    T: Send + Sync + 'static,
    F: FnOnce() -> T + Send + 'static,
{
    spawn_fallible_with(sched, SpawnOptions::default(), move || Ok(work()))
}

pub fn spawn_with<T, F>(sched: &Scheduler, opts: SpawnOptions, work: F) -> Future<T>
where
    T: Send + Sync + 'static,
    F: FnOnce() -> T + Send + 'static,
{
    spawn_fallible_with(sched, opts, move || Ok(work()))
}

/// Spawns work that signals failure through its `Result`.
pub fn spawn_fallible<T, F>(sched: &Scheduler, work: F) -> Future<T>
where
    T: Send + Sync + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    spawn_fallible_with(sched, SpawnOptions::default(), work)
}

pub fn spawn_fallible_with<T, F>(sched: &Scheduler, opts: SpawnOptions, work: F) -> Future<T>
where
    T: Send + Sync + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    let (p, f) = pair_with::<T>(sched.downgrade());
    // a task dropped unrun (shutdown) reports Shutdown rather than a broken promise
    let p = p.with_drop_error(Error::Shutdown);
    let submitted = sched.submit(
        opts.priority,
        opts.worker,
        Box::pin(async move {
            let _ = p.set_result(catch(work));
        }),
    );
    match submitted {
        Ok(_) => f,
        Err(e) => Future::failed(e),
    }
}

/// Spawns an `async` body. Awaiting a [`Future`] inside it suspends the task
/// instead of blocking its worker.
pub fn spawn_async<T, Fut>(sched: &Scheduler, opts: SpawnOptions, body: Fut) -> Future<T>
where
    T: Send + Sync + 'static,
    Fut: std::future::Future<Output = Result<T>> + Send + 'static,
{
    let (p, f) = pair_with::<T>(sched.downgrade());
    let p = p.with_drop_error(Error::Shutdown);
    let submitted = sched.submit(
        opts.priority,
        opts.worker,
        Box::pin(async move {
            let mut body = std::pin::pin!(body);
            let out = std::future::poll_fn(|cx| {
                match catch_unwind(AssertUnwindSafe(|| body.as_mut().poll(cx))) {
                    Ok(p) => p,
                    Err(panic) => std::task::Poll::Ready(Err(Error::Panicked(panic_message(panic)))),
                }
            })
            .await;
            let _ = p.set_result(out);
        }),
    );
    match submitted {
        Ok(_) => f,
        Err(e) => Future::failed(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{Policy, SchedulerConfig};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    fn sched(workers: usize) -> Scheduler {
        Scheduler::new(SchedulerConfig::new(Policy::LocalPriority, workers)).unwrap()
    }

    #[test]
    fn spawn_yields_value() {
        let s = sched(2);
        assert_eq!(spawn(&s, || 42).get(), Ok(42));
        s.shutdown(true);
    }

    #[test]
    fn spawn_error_and_panic() {
        let s = sched(2);
        let e = Error::TaskFailed("E".into());
        let e2 = e.clone();
        assert_eq!(spawn_fallible::<i32, _>(&s, move || Err(e2)).get(), Err(e));
        let f = spawn::<i32, _>(&s, || panic!("boom"));
        assert_eq!(f.get(), Err(Error::Panicked("boom".into())));
        s.shutdown(true);
    }

    #[test]
    fn spawn_after_shutdown_is_rejected() {
        let s = sched(1);
        s.shutdown(true);
        assert_eq!(spawn(&s, || 1).get(), Err(Error::Shutdown));
    }

    #[test]
    fn hundred_thousand_increments() {
        let s = sched(4);
        let counter = Arc::new(AtomicUsize::new(0));
        let fs: Vec<_> = (0..100_000)
            .map(|_| {
                let c = counter.clone();
                spawn(&s, move || {
                    c.fetch_add(1, Ordering::Relaxed);
                })
            })
            .collect();
        for f in fs {
            f.get().unwrap();
        }
        // serial oracle: the same loop run in place
        let mut serial = 0usize;
        for _ in 0..100_000 {
            serial += 1;
        }
        assert_eq!(counter.load(Ordering::SeqCst), serial);
        s.shutdown(true);
    }

    #[test]
    fn then_chains() {
        let s = sched(2);
        let mut f = spawn(&s, || 0u64);
        for _ in 0..1000 {
            f = f.then(|x| x + 1);
        }
        assert_eq!(f.get(), Ok(1000));
        let f = spawn(&s, || 0).then(|x| x + 1).then(|x| x + 1).then(|x| x + 1);
        assert_eq!(f.get(), Ok(3));
        s.shutdown(true);
    }

    #[test]
    fn continuation_runs_as_task() {
        let s = sched(2);
        let f = spawn(&s, || 1).then(|x| (x, crate::scheduler::current_task().is_some()));
        assert_eq!(f.get(), Ok((1, true)));
        s.shutdown(true);
    }

    #[test]
    fn single_worker_rendezvous_blocking_and_async() {
        let s = sched(1);
        let (p, fut) = promise::<i32>();
        let a = spawn(&s, move || fut.get());
        let b = spawn(&s, move || p.set_value(9));
        assert_eq!(a.wait_timeout(Duration::from_secs(10)), Some(Ok(Ok(9))));
        b.get().unwrap().unwrap();

        let (p, fut) = promise::<i32>();
        let a = spawn_async(&s, SpawnOptions::default(), async move { fut.await });
        let b = spawn(&s, move || p.set_value(11));
        assert_eq!(a.wait_timeout(Duration::from_secs(10)), Some(Ok(11)));
        b.get().unwrap().unwrap();
        s.shutdown(true);
    }

    #[test]
    fn async_task_suspends_and_resumes() {
        let s = sched(1);
        let (p, fut) = promise::<i32>();
        let states = Arc::new(parking_lot::Mutex::new(Vec::new()));
        let a = spawn_async(&s, SpawnOptions::default(), async move { Ok(fut.await? * 2) });
        std::thread::sleep(Duration::from_millis(20));
        states.lock().push(a.is_ready());
        p.set_value(21).unwrap();
        assert_eq!(a.get(), Ok(42));
        assert_eq!(*states.lock(), vec![false]);
        s.shutdown(true);
    }
}
