use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::future::{pair_with, Future};
use super::{spawn, Error};
use crate::error::Result;
use crate::scheduler::Scheduler;

/// Chunks per worker used by [`parallel_for`].
pub const DEFAULT_CHUNKS_PER_WORKER: usize = 4;

/// Completes once every input has completed. Values keep input order; if
/// any input failed, the result is the first error in input order.
pub fn when_all<T>(fs: Vec<Future<T>>) -> Future<Vec<T>>
where
    T: Clone + Send + Sync + 'static,
{
    if fs.is_empty() {
        return Future::ready(Vec::new());
    }
    let exec = fs[0]
        .scheduler()
        .map(|s| s.downgrade())
        .unwrap_or_default();
    let (p, out) = pair_with::<Vec<T>>(exec);
    let n = fs.len();
    let slots: Arc<Mutex<Vec<Option<Result<T>>>>> = Arc::new(Mutex::new(vec![None; n]));
    let remaining = Arc::new(AtomicUsize::new(n));
    let p = Arc::new(Mutex::new(Some(p)));
    for (i, f) in fs.into_iter().enumerate() {
        let slots = slots.clone();
        let remaining = remaining.clone();
        let p = p.clone();
        f.on_complete(move |r| {
            slots.lock()[i] = Some(r.clone());
            if remaining.fetch_sub(1, Ordering::AcqRel) == 1 {
                let results = std::mem::take(&mut *slots.lock());
                let gathered: Result<Vec<T>> = results
                    .into_iter()
                    .map(|r| r.expect("every slot filled"))
                    .collect();
                let p = p.lock().take();
                if let Some(p) = p {
                    let _ = p.set_result(gathered);
                }
            }
        });
    }
    out
}

/// Runs `body` once, as a task, after every dependency has completed.
/// A failed dependency skips `body` and propagates its error.
pub fn dataflow<T, U, F>(sched: &Scheduler, body: F, deps: Vec<Future<T>>) -> Future<U>
where
    T: Clone + Send + Sync + 'static,
    U: Send + Sync + 'static,
    F: FnOnce(Vec<T>) -> U + Send + 'static,
{
    if deps.is_empty() {
        return spawn(sched, move || body(Vec::new()));
    }
    let all = when_all(deps);
    // make sure the continuation lands on `sched` even for ready inputs
    // created outside the runtime
    let (p, f) = pair_with::<Vec<T>>(sched.downgrade());
    all.on_complete(move |r| {
        let _ = p.set_result(r.clone());
    });
    f.then(body)
}

/// Invokes `body(i)` exactly once for every `i` in `range`, in chunks of
/// `ceil(len / (chunks_per_worker * workers))` spawned as separate tasks.
pub fn parallel_for<F>(sched: &Scheduler, range: Range<usize>, body: F) -> Future<()>
where
    F: Fn(usize) + Send + Sync + 'static,
{
    parallel_for_chunked(sched, range, DEFAULT_CHUNKS_PER_WORKER, move |chunk| {
        for i in chunk {
            body(i);
        }
    })
}

/// Like [`parallel_for`] but hands each task its whole chunk.
pub fn parallel_for_chunked<F>(
    sched: &Scheduler,
    range: Range<usize>,
    chunks_per_worker: usize,
    body: F,
) -> Future<()>
where
    F: Fn(Range<usize>) + Send + Sync + 'static,
{
    if range.start > range.end {
        return Future::failed(Error::InvalidArgument(format!(
            "parallel_for range {}..{} is reversed",
            range.start, range.end
        )));
    }
    let len = range.end - range.start;
    if len == 0 {
        return Future::ready(());
    }
    let chunk = len.div_ceil(chunks_per_worker.max(1) * sched.workers());
    let body = Arc::new(body);
    let parts: Vec<Future<()>> = (range.start..range.end)
        .step_by(chunk)
        .map(|lo| {
            let hi = (lo + chunk).min(range.end);
            let body = body.clone();
            spawn(sched, move || body(lo..hi))
        })
        .collect();
    let (p, f) = pair_with::<()>(sched.downgrade());
    when_all(parts).on_complete(move |r| {
        let _ = p.set_result(r.clone().map(|_| ()));
    });
    f
}
