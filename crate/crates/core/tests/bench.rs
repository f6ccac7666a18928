use amt_core::bench::{self, Boundary, Skew, Workload};
use amt_core::scheduler::{Policy, SchedulerConfig};
use amt_core::{Cluster, Runtime, RuntimeConfig};

fn cluster(n: u32) -> Cluster {
    Cluster::start(n, SchedulerConfig::new(Policy::LocalPriority, 2)).unwrap()
}

#[test]
fn fib_report_has_the_right_value_and_counts_tasks() {
    let rt = Runtime::boot(RuntimeConfig::local(SchedulerConfig::new(Policy::LocalPriority, 4))).unwrap();
    let r = bench::bench_fib(&rt, 10, 3).unwrap();
    assert_eq!(r.value("0", "value"), Some("55"));
    for (n, want) in [(0, "0"), (1, "1")] {
        assert_eq!(bench::bench_fib(&rt, n, 20).unwrap().value("0", "value"), Some(want));
    }
    let r = bench::bench_fib(&rt, 30, 20).unwrap();
    assert_eq!(r.value("0", "value"), Some("832040"));
    let tasks: u64 = r.value("0", "tasks").unwrap().parse().unwrap();
    assert!(tasks > 1);
    assert!(r.counters.iter().any(|c| c.name.ends_with("/tasks/executed/cumulative")));
    rt.shutdown();
}

#[test]
fn distributed_stencil_matches_the_serial_oracle_bit_for_bit() {
    let c = cluster(2);
    let initial: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64).sin()).collect();
    for boundary in [Boundary::FixedZero, Boundary::ZeroFlux] {
        let got = bench::stencil(c.locality(0), &initial, 100, boundary).unwrap();
        let want = bench::stencil_serial(&initial, 100, boundary);
        assert_eq!(got, want, "{boundary}");
    }
    c.shutdown();
}

#[test]
fn stencil_handles_single_cell_partitions_and_many_localities() {
    let c = cluster(4);
    let initial = bench::stencil::spike(4);
    let got = bench::stencil(c.locality(0), &initial, 25, Boundary::FixedZero).unwrap();
    assert_eq!(got, bench::stencil_serial(&initial, 25, Boundary::FixedZero));
    let initial: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let got = bench::stencil(c.locality(2), &initial, 40, Boundary::ZeroFlux).unwrap();
    assert_eq!(got, bench::stencil_serial(&initial, 40, Boundary::ZeroFlux));
    assert!(bench::stencil(c.locality(0), &initial[..10], 1, Boundary::ZeroFlux).is_err());
    c.shutdown();
}

#[test]
fn uniform_field_survives_the_distributed_stencil() {
    let c = cluster(2);
    let u = vec![3.25; 64];
    assert_eq!(bench::stencil(c.locality(1), &u, 100, Boundary::ZeroFlux).unwrap(), u);
    c.shutdown();
}

#[test]
fn stencil_report_is_exact() {
    let c = cluster(2);
    let r = bench::bench_stencil(c.locality(0), 64, 100, Boundary::FixedZero).unwrap();
    assert_eq!(r.value("0", "max_abs_error"), Some("0"));
    let back = bench::BenchmarkReport::from_csv(&r.to_csv()).unwrap();
    assert_eq!(back.rows, r.rows);
    c.shutdown();
}

#[test]
fn migrate_demo_loses_nothing() {
    let c = cluster(3);
    let r = bench::demo_migrate(c.locality(0), 2, 20).unwrap();
    assert_eq!(r.rows.len(), 6);
    assert_eq!(r.rows.last().unwrap().values[3], "120");
    c.shutdown();
}

#[test]
fn policy_compare_runs_every_policy() {
    let rt = Runtime::boot(RuntimeConfig::local(SchedulerConfig::new(Policy::Static, 4))).unwrap();
    let r = bench::bench_policy_compare(rt.scheduler(), 400, 50, Skew::AllToZero, Workload::Sleep).unwrap();
    assert_eq!(r.rows.len(), 3);
    for row in 0..3 {
        assert_eq!(r.value(&row.to_string(), "executed"), Some("400"));
    }
    assert_eq!(r.value("0", "policy"), Some("static"));
    assert_eq!(r.value("0", "steals_succeeded"), Some("0"));
    assert_eq!(rt.scheduler().policy(), Policy::Static);
    rt.shutdown();
}
