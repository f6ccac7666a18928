//! Benchmarks and demos driven by the command-line harness.

mod fib;
mod migrate;
mod policy;
mod report;
pub mod stencil;

pub use fib::{bench_fib, fib, fib_closed_form, fib_serial};
pub use migrate::demo_migrate;
pub use policy::{bench_policy_compare, run_policy, PolicyRun, Skew, Workload};
pub use report::{counters_to_csv, BenchmarkReport, CounterSample, ReportRow};
pub use stencil::{bench_stencil, stencil, stencil_serial, Boundary};

use crate::runtime::Runtime;

pub(crate) fn actions() -> Vec<crate::parcelport::Action> {
    stencil::actions()
}

/// Samples every counter whose name starts with `prefix` on every locality.
pub fn snapshot(rt: &Runtime, prefix: &str) -> Vec<CounterSample> {
    let names = match rt.list_counters(prefix).get() {
        Ok(n) => n,
        Err(e) => {
            log::warn!("counter listing failed: {e}");
            return Vec::new();
        }
    };
    let queries: Vec<_> = names.iter().map(|n| rt.query_counter(n)).collect();
    names
        .into_iter()
        .zip(queries)
        .filter_map(|(name, q)| {
            let v = q.get().ok().filter(|v| v.is_ok())?;
            Some(CounterSample {
                name,
                value: v.value,
                sampled_at_ns: v.sampled_at_ns,
            })
        })
        .collect()
}
