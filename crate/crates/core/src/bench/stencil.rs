//! Distributed 1D heat stencil with halo exchange over AGAS channels.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use super::{snapshot, BenchmarkReport};
use crate::agas::Gid;
use crate::error::{DecodeError, Error, Result};
use crate::parcelport::{Action, ArgType, Value};
use crate::runtime::Runtime;
use crate::tasking::{spawn, spawn_async, Channel, Future, SpawnOptions};

pub const ALPHA: f64 = 0.25;
pub const SETUP: &str = "stencil/setup";
pub const RUN: &str = "stencil/run";

/// What lies beyond the two ends of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Ghost cells hold 0.
    #[default]
    FixedZero,
    /// Ghost cells mirror the edge cell, so nothing flows out.
    ZeroFlux,
}

impl Boundary {
    fn ghost(self, edge: f64) -> f64 {
        match self {
            Boundary::FixedZero => 0.0,
            Boundary::ZeroFlux => edge,
        }
    }

    fn code(self) -> i64 {
        match self {
            Boundary::FixedZero => 0,
            Boundary::ZeroFlux => 1,
        }
    }

    fn from_code(c: i64) -> Option<Boundary> {
        match c {
            0 => Some(Boundary::FixedZero),
            1 => Some(Boundary::ZeroFlux),
            _ => None,
        }
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" | "fixed-zero" => Ok(Boundary::FixedZero),
            "zero-flux" | "flux" => Ok(Boundary::ZeroFlux),
            _ => Err(Error::InvalidArgument(format!("unknown boundary {s:?}"))),
        }
    }
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundary::FixedZero => "fixed-zero",
            Boundary::ZeroFlux => "zero-flux",
        })
    }
}

#[inline]
fn update(l: f64, c: f64, r: f64) -> f64 {
    c + ALPHA * (l - 2.0 * c + r)
}

/// The reference: the same arithmetic, one thread, no partitioning.
pub fn stencil_serial(initial: &[f64], steps: usize, boundary: Boundary) -> Vec<f64> {
    let mut u = initial.to_vec();
    let mut next = vec![0.0; u.len()];
    let n = u.len();
    for _ in 0..steps {
        for i in 0..n {
            let l = if i == 0 { boundary.ghost(u[0]) } else { u[i - 1] };
            let r = if i + 1 == n { boundary.ghost(u[n - 1]) } else { u[i + 1] };
            next[i] = update(l, u[i], r);
        }
        std::mem::swap(&mut u, &mut next);
    }
    u
}

fn to_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn from_bytes(b: &[u8]) -> Result<Vec<f64>> {
    if b.len() % 8 != 0 {
        return Err(DecodeError::new("cells", "length is not a multiple of 8").into());
    }
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn opt_gid(v: &Value) -> Result<Option<Gid>> {
    match v {
        Value::Unit => Ok(None),
        v => v
            .as_gid()
            .map(Some)
            .ok_or_else(|| DecodeError::new("neighbour", "expected a gid or unit").into()),
    }
}

/// Incoming halo values, which may arrive out of step order.
struct Halo {
    channel: Channel<Value>,
    early: HashMap<i64, f64>,
}

impl Halo {
    async fn take(&mut self, step: i64) -> Result<f64> {
        loop {
            if let Some(v) = self.early.remove(&step) {
                return Ok(v);
            }
            let msg = self.channel.recv().await?;
            match msg.as_list() {
                Some([Value::Int(s), Value::Float(v)]) => {
                    self.early.insert(*s, *v);
                }
                _ => return Err(DecodeError::new("halo", "expected [step, value]").into()),
            }
        }
    }
}

struct Partition {
    cells: Vec<f64>,
    steps: i64,
    boundary: Boundary,
    left_out: Option<Gid>,
    right_out: Option<Gid>,
    left_in: Gid,
    right_in: Gid,
}

impl Partition {
    fn decode(args: &[Value]) -> Result<Partition> {
        let bad = || DecodeError::new("stencil", "malformed partition");
        let [cells, steps, boundary, lo, ro, li, ri] = args else {
            return Err(bad().into());
        };
        Ok(Partition {
            cells: from_bytes(cells.as_bytes().ok_or_else(bad)?)?,
            steps: steps.as_int().ok_or_else(bad)?,
            boundary: boundary.as_int().and_then(Boundary::from_code).ok_or_else(bad)?,
            left_out: opt_gid(lo)?,
            right_out: opt_gid(ro)?,
            left_in: li.as_gid().ok_or_else(bad)?,
            right_in: ri.as_gid().ok_or_else(bad)?,
        })
    }
}

/// Advances one partition. The interior of each step is spawned before the
/// halos are awaited, so communication overlaps with computation.
async fn run_partition(rt: Runtime, p: Partition) -> Result<Value> {
    let local = |g: Gid| {
        rt.local_channel(g)
            .ok_or_else(|| Error::WrongLocality(format!("halo channel {g} is not local")))
    };
    let mut from_left = Halo { channel: local(p.left_in)?, early: HashMap::new() };
    let mut from_right = Halo { channel: local(p.right_in)?, early: HashMap::new() };
    let sched = rt.scheduler().clone();
    let m = p.cells.len();
    let mut u = Arc::new(p.cells);
    let mut sends: Vec<Future<()>> = Vec::new();
    for step in 0..p.steps {
        if let Some(g) = p.left_out {
            sends.push(rt.channel_send(g, Value::List(vec![Value::Int(step), Value::Float(u[0])])));
        }
        if let Some(g) = p.right_out {
            sends.push(rt.channel_send(g, Value::List(vec![Value::Int(step), Value::Float(u[m - 1])])));
        }
        let cur = u.clone();
        let interior = spawn(&sched, move || {
            (1..m.saturating_sub(1))
                .map(|i| update(cur[i - 1], cur[i], cur[i + 1]))
                .collect::<Vec<f64>>()
        });
        let lh = match p.left_out {
            Some(_) => from_left.take(step).await?,
            None => p.boundary.ghost(u[0]),
        };
        let rh = match p.right_out {
            Some(_) => from_right.take(step).await?,
            None => p.boundary.ghost(u[m - 1]),
        };
        let mut next = Vec::with_capacity(m);
        if m == 1 {
            next.push(update(lh, u[0], rh));
        } else {
            next.push(update(lh, u[0], u[1]));
            next.extend(interior.await?);
            next.push(update(u[m - 2], u[m - 1], rh));
        }
        u = Arc::new(next);
        // keep at most one step of sends outstanding
        if sends.len() > 2 {
            for s in sends.drain(..sends.len() - 2) {
                s.await?;
            }
        }
    }
    for s in sends {
        s.await?;
    }
    for g in [p.left_in, p.right_in] {
        rt.unregister(g).await?;
    }
    Ok(Value::Bytes(to_bytes(&u)))
}

static RUN_IDS: AtomicU64 = AtomicU64::new(0);

pub(crate) fn actions() -> Vec<Action> {
    vec![
        // creates this locality's two inbound halo channels
        Action::deferred(SETUP, vec![ArgType::Bytes], |ctx, args| {
            let tag = String::from_utf8_lossy(args[0].as_bytes().unwrap_or_default()).into_owned();
            let rt = ctx.runtime.clone();
            let l = rt.locality();
            let left = rt.new_channel(Some(&format!("/stencil/{tag}/locality#{l}/from-left")));
            let right = rt.new_channel(Some(&format!("/stencil/{tag}/locality#{l}/from-right")));
            crate::tasking::when_all(vec![left, right]).and_then(|g| Ok(Value::List(vec![g[0].into(), g[1].into()])))
        }),
        Action::deferred(
            RUN,
            vec![
                ArgType::Bytes,
                ArgType::Int,
                ArgType::Int,
                ArgType::Any,
                ArgType::Any,
                ArgType::Bytes,
                ArgType::Bytes,
            ],
            |ctx, args| match Partition::decode(&args) {
                Ok(p) => spawn_async(
                    ctx.runtime.scheduler(),
                    SpawnOptions::default(),
                    run_partition(ctx.runtime.clone(), p),
                ),
                Err(e) => Future::failed(e),
            },
        ),
    ]
}

/// Runs `steps` steps over `initial`, split evenly across every locality
/// of `rt`, and gathers the field back here.
pub fn stencil(rt: &Runtime, initial: &[f64], steps: usize, boundary: Boundary) -> Result<Vec<f64>> {
    let n = rt.num_localities() as usize;
    if initial.is_empty() || initial.len() % n != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} cells cannot be split over {n} localities",
            initial.len()
        )));
    }
    let m = initial.len() / n;
    let tag = format!("{}-{}", std::process::id(), RUN_IDS.fetch_add(1, Ordering::Relaxed));
    let setups: Vec<_> = (0..n as u32)
        .map(|l| rt.apply(Gid::locality_service(l), SETUP, vec![Value::Bytes(tag.clone().into_bytes())]))
        .collect();
    let mut inbound = Vec::with_capacity(n);
    for s in setups {
        let v = s.get()?;
        match v.as_list() {
            Some([a, b]) => inbound.push((
                a.as_gid().ok_or_else(|| DecodeError::new("setup", "gid"))?,
                b.as_gid().ok_or_else(|| DecodeError::new("setup", "gid"))?,
            )),
            _ => return Err(DecodeError::new("setup", "expected two gids").into()),
        }
    }
    let runs: Vec<_> = (0..n)
        .map(|l| {
            let out = |g: Option<Gid>| g.map(Value::from).unwrap_or(Value::Unit);
            // my left neighbour hears me on its right-hand channel
            let left_out = (l > 0).then(|| inbound[l - 1].1);
            let right_out = (l + 1 < n).then(|| inbound[l + 1].0);
            rt.apply(
                Gid::locality_service(l as u32),
                RUN,
                vec![
                    Value::Bytes(to_bytes(&initial[l * m..(l + 1) * m])),
                    Value::Int(steps as i64),
                    Value::Int(boundary.code()),
                    out(left_out),
                    out(right_out),
                    inbound[l].0.into(),
                    inbound[l].1.into(),
                ],
            )
        })
        .collect();
    let mut field = Vec::with_capacity(initial.len());
    for r in runs {
        let v = r.get()?;
        field.extend(from_bytes(v.as_bytes().ok_or_else(|| DecodeError::new("run", "expected bytes"))?)?);
    }
    Ok(field)
}

/// A unit spike in the middle of the domain.
pub fn spike(cells: usize) -> Vec<f64> {
    let mut u = vec![0.0; cells];
    if cells > 0 {
        u[cells / 2] = 1.0;
    }
    u
}

pub fn bench_stencil(rt: &Runtime, cells: usize, steps: usize, boundary: Boundary) -> Result<BenchmarkReport> {
    let initial = spike(cells);
    let t0 = Instant::now();
    let field = stencil(rt, &initial, steps, boundary)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    let oracle = stencil_serial(&initial, steps, boundary);
    let max_abs = field
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut r = BenchmarkReport::new(
        "stencil",
        &["cells", "steps", "localities", "boundary", "sum", "max_abs_error"],
    );
    r.push(
        "0",
        ms,
        vec![
            cells.to_string(),
            steps.to_string(),
            rt.num_localities().to_string(),
            boundary.to_string(),
            field.iter().sum::<f64>().to_string(),
            max_abs.to_string(),
        ],
    );
    r.counters = snapshot(rt, "/parcel");
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_field_is_a_fixed_point_with_zero_flux() {
        let u = vec![0.7; 32];
        assert_eq!(stencil_serial(&u, 500, Boundary::ZeroFlux), u);
    }

    #[test]
    fn zero_flux_conserves_mass() {
        let u = spike(33);
        let out = stencil_serial(&u, 200, Boundary::ZeroFlux);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_zero_boundaries_drain_monotonically() {
        let mut u = spike(16);
        let mut mass = 1.0;
        for _ in 0..50 {
            u = stencil_serial(&u, 1, Boundary::FixedZero);
            let m: f64 = u.iter().sum();
            assert!(m <= mass + 1e-15);
            mass = m;
        }
        assert!(mass < 1.0);
        assert!(u.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn one_step_by_hand() {
        let out = stencil_serial(&[0.0, 4.0, 0.0], 1, Boundary::FixedZero);
        assert_eq!(out, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn bytes_round_trip() {
        let v = vec![0.1, -0.0, f64::MAX, 1e-310];
        let back = from_bytes(&to_bytes(&v)).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(from_bytes(&[0; 7]).is_err());
    }
}
