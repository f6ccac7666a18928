use std::time::Instant;

use super::{snapshot, BenchmarkReport};
use crate::error::{Error, Result};
use crate::runtime::Runtime;
use crate::scheduler::Scheduler;
use crate::tasking::{dataflow, spawn, Future};

/// Largest n whose Fibonacci number fits in a u64.
pub const MAX_N: u64 = 93;

pub fn fib_serial(n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let (mut a, mut b) = (0u64, 1u64);
    for _ in 1..n {
        (a, b) = (b, a + b);
    }
    b
}

/// Binet's formula, exact in f64 up to n = 70.
pub fn fib_closed_form(n: u64) -> Option<u64> {
    if n > 70 {
        return None;
    }
    let sqrt5 = 5f64.sqrt();
    let phi = (1.0 + sqrt5) / 2.0;
    Some((phi.powi(n as i32) / sqrt5).round() as u64)
}

/// Fibonacci as a tree of dataflow nodes; subtrees below `cutoff` run
/// serially inside one task.
pub fn fib(sched: &Scheduler, n: u64, cutoff: u64) -> Future<u64> {
    if n > MAX_N {
        return Future::failed(Error::InvalidArgument(format!("fib({n}) overflows u64")));
    }
    node(sched, n, cutoff.max(2))
}

fn node(sched: &Scheduler, n: u64, cutoff: u64) -> Future<u64> {
    if n < cutoff {
        return spawn(sched, move || fib_serial(n));
    }
    let (s1, s2) = (sched.clone(), sched.clone());
    // the children are expanded inside tasks, not by the caller
    let a = spawn(sched, move || node(&s1, n - 1, cutoff)).flatten();
    let b = spawn(sched, move || node(&s2, n - 2, cutoff)).flatten();
    dataflow(sched, |v: Vec<u64>| v[0] + v[1], vec![a, b])
}

pub fn bench_fib(rt: &Runtime, n: u64, cutoff: u64) -> Result<BenchmarkReport> {
    let sched = rt.scheduler();
    // spawned, not executed: a task completes its future before it is
    // counted as executed, so the latter can lag behind `get`
    let before = sched.stats().spawned;
    let t0 = Instant::now();
    let value = fib(sched, n, cutoff).get()?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    let tasks = sched.stats().spawned - before;
    let expected = fib_closed_form(n).unwrap_or_else(|| fib_serial(n));
    if value != expected {
        return Err(Error::TaskFailed(format!("fib({n}) = {value}, expected {expected}")));
    }
    let mut r = BenchmarkReport::new("fib", &["n", "cutoff", "value", "tasks", "workers", "policy"]);
    r.push(
        "0",
        ms,
        vec![
            n.to_string(),
            cutoff.to_string(),
            value.to_string(),
            tasks.to_string(),
            sched.workers().to_string(),
            sched.policy().to_string(),
        ],
    );
    r.counters = snapshot(rt, "/scheduler");
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{Policy, SchedulerConfig};

    #[test]
    fn closed_form_agrees_with_iteration() {
        for n in 0..=70 {
            assert_eq!(fib_closed_form(n), Some(fib_serial(n)), "n={n}");
        }
        assert_eq!(fib_serial(93), 12_200_160_415_121_876_738);
    }

    #[test]
    fn dataflow_fib_matches() {
        let s = Scheduler::new(SchedulerConfig::new(Policy::LocalPriority, 3)).unwrap();
        for (n, want) in [(0, 0), (1, 1), (2, 1), (10, 55), (25, 75_025)] {
            assert_eq!(fib(&s, n, 5).get().unwrap(), want);
        }
        assert!(fib(&s, 94, 10).get().is_err());
        s.shutdown(true);
    }
}
