use std::str::FromStr;
use std::time::{Duration, Instant};

use super::BenchmarkReport;
use crate::error::{Error, Result};
use crate::scheduler::{Policy, Priority, Scheduler, StealStats};
use crate::tasking::{promise, when_all};

/// Where the synthetic tasks are enqueued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Skew {
    /// Round-robin over all workers.
    Balanced,
    /// Everything on worker 0.
    AllToZero,
}

impl FromStr for Skew {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Skew::Balanced),
            "all-to-0" | "all-to-zero" => Ok(Skew::AllToZero),
            _ => Err(Error::InvalidArgument(format!("unknown skew {s:?}"))),
        }
    }
}

impl std::fmt::Display for Skew {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Skew::Balanced => "balanced",
            Skew::AllToZero => "all-to-0",
        })
    }
}

/// How a synthetic task spends its time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    /// Busy-waits on the CPU.
    Spin,
    /// Sleeps. Gives meaningful makespans when there are fewer cores than
    /// workers, since sleeping workers do not compete for a core.
    Sleep,
    /// `Spin` if every worker can have its own core, otherwise `Sleep`.
    Auto,
}

impl FromStr for Workload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spin" => Ok(Workload::Spin),
            "sleep" => Ok(Workload::Sleep),
            "auto" => Ok(Workload::Auto),
            _ => Err(Error::InvalidArgument(format!("unknown workload {s:?}"))),
        }
    }
}

impl std::fmt::Display for Workload {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Workload::Spin => "spin",
            Workload::Sleep => "sleep",
            Workload::Auto => "auto",
        })
    }
}

impl Workload {
    pub fn resolve(self, workers: usize) -> Workload {
        match self {
            Workload::Auto => {
                let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
                if cores >= workers {
                    Workload::Spin
                } else {
                    Workload::Sleep
                }
            }
            w => w,
        }
    }

    fn run(self, d: Duration) {
        match self {
            Workload::Sleep => std::thread::sleep(d),
            _ => {
                let t = Instant::now();
                while t.elapsed() < d {
                    std::hint::spin_loop();
                }
            }
        }
    }
}

/// Makespan and stealing activity of one policy.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub policy: Policy,
    pub makespan: Duration,
    pub stats: StealStats,
}

/// Switches `sched` to `policy` and runs `tasks` tasks of `task_us` each,
/// timing from the first submission to the last completion.
pub fn run_policy(
    sched: &Scheduler,
    policy: Policy,
    tasks: usize,
    task_us: u64,
    skew: Skew,
    workload: Workload,
) -> Result<PolicyRun> {
    sched.set_policy(policy);
    let workload = workload.resolve(sched.workers());
    let d = Duration::from_micros(task_us);
    let workers = sched.workers();
    let before = sched.stats();
    let t0 = Instant::now();
    let mut done = Vec::with_capacity(tasks);
    for i in 0..tasks {
        let (p, f) = promise::<()>();
        let hint = match skew {
            Skew::Balanced => i % workers,
            Skew::AllToZero => 0,
        };
        sched.submit_fn(Priority::Normal, Some(hint), move || {
            workload.run(d);
            let _ = p.set_value(());
        })?;
        done.push(f);
    }
    when_all(done).get()?;
    let makespan = t0.elapsed();
    // a worker bumps its executed count after the body returns, so the
    // last few tasks may not be tallied yet
    let deadline = Instant::now() + Duration::from_secs(1);
    let mut stats = sched.stats().since(&before);
    while stats.tasks_executed() < tasks as u64 && Instant::now() < deadline {
        std::thread::yield_now();
        stats = sched.stats().since(&before);
    }
    Ok(PolicyRun { policy, makespan, stats })
}

/// Runs the same workload under every policy, in turn, on one scheduler.
pub fn bench_policy_compare(
    sched: &Scheduler,
    tasks: usize,
    task_us: u64,
    skew: Skew,
    workload: Workload,
) -> Result<BenchmarkReport> {
    let original = sched.policy();
    let resolved = workload.resolve(sched.workers());
    let mut r = BenchmarkReport::new(
        "policy",
        &[
            "policy",
            "tasks",
            "task_us",
            "skew",
            "workload",
            "workers",
            "executed",
            "steals_attempted",
            "steals_succeeded",
        ],
    );
    for (i, policy) in Policy::ALL.into_iter().enumerate() {
        let run = run_policy(sched, policy, tasks, task_us, skew, resolved)?;
        r.push(
            &i.to_string(),
            run.makespan.as_secs_f64() * 1e3,
            vec![
                policy.to_string(),
                tasks.to_string(),
                task_us.to_string(),
                skew.to_string(),
                resolved.to_string(),
                sched.workers().to_string(),
                run.stats.tasks_executed().to_string(),
                run.stats.steal_attempts().to_string(),
                run.stats.steals_succeeded().to_string(),
            ],
        );
    }
    sched.set_policy(original);
    Ok(r)
}
