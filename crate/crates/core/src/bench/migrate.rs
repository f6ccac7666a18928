use std::time::Instant;

use super::{snapshot, BenchmarkReport};
use crate::agas::CounterObject;
use crate::error::{Error, Result};
use crate::parcelport::Value;
use crate::runtime::Runtime;

/// Creates a counter here, moves it around every locality `rounds` times
/// while adding to it, and checks that no update is lost and that every
/// hop is visible to resolution.
pub fn demo_migrate(rt: &Runtime, rounds: usize, adds_per_hop: usize) -> Result<BenchmarkReport> {
    let n = rt.num_localities();
    let gid = rt.new_counter(0)?;
    let mut r = BenchmarkReport::new("migrate", &["from", "to", "owner", "value", "forwarded"]);
    let mut expected = 0i64;
    let mut here = rt.locality();
    let hops = rounds * n as usize;
    for hop in 0..hops {
        let to = (here + 1) % n;
        let t0 = Instant::now();
        let adds: Vec<_> = (0..adds_per_hop)
            .map(|_| rt.apply(gid, CounterObject::ADD, vec![Value::Int(1)]))
            .collect();
        let moved = rt.migrate(gid, to);
        for a in adds {
            a.get()?;
        }
        moved.get()?;
        expected += adds_per_hop as i64;
        let owner = rt.resolve(gid).get()?.locality;
        let value = rt.apply(gid, CounterObject::GET, vec![]).get()?;
        if owner != to || value != Value::Int(expected) {
            return Err(Error::TaskFailed(format!(
                "after hop {hop}: owner {owner} (expected {to}), value {value:?} (expected {expected})"
            )));
        }
        r.push(
            &hop.to_string(),
            t0.elapsed().as_secs_f64() * 1e3,
            vec![
                here.to_string(),
                to.to_string(),
                owner.to_string(),
                expected.to_string(),
                rt.parcel_counts().forwarded.to_string(),
            ],
        );
        here = to;
    }
    r.counters = snapshot(rt, "/agas");
    Ok(r)
}
