//! Performance counters: named metric sources sampled on demand.
//!
//! Names follow `/component/locality#L[/worker#W]/metric[/cumulative|/instantaneous]`
//! where the metric may span several segments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::RwLock;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterKind {
    /// Never decreases, except across a reset.
    Monotonic,
    Gauge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterPath {
    pub component: String,
    pub locality: u32,
    pub worker: Option<u32>,
    /// Everything after the locality/worker segments, e.g.
    /// `tasks/executed/cumulative`.
    pub metric: String,
}

fn instance(seg: &str, key: &str) -> Option<u32> {
    let n = seg.strip_prefix(key)?.strip_prefix('#')?;
    if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) || (n.len() > 1 && n.starts_with('0')) {
        return None;
    }
    n.parse().ok()
}

fn malformed(name: &str, why: &str) -> Error {
    Error::InvalidArgument(format!("malformed counter name {name:?}: {why}"))
}

impl FromStr for CounterPath {
    type Err = Error;

    fn from_str(name: &str) -> Result<CounterPath> {
        crate::agas::validate_name(name).map_err(|_| malformed(name, "not a printable path"))?;
        let segs: Vec<&str> = name[1..].split('/').collect();
        if segs.iter().any(|s| s.is_empty()) {
            return Err(malformed(name, "empty segment"));
        }
        let ok_ident = |s: &str| {
            s.bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'#' || b == b'.')
        };
        if segs.len() < 3 {
            return Err(malformed(name, "expected /component/locality#L/metric"));
        }
        let component = segs[0];
        if !ok_ident(component) || component.contains('#') {
            return Err(malformed(name, "bad component"));
        }
        let locality = instance(segs[1], "locality").ok_or_else(|| malformed(name, "expected locality#L"))?;
        let mut rest = &segs[2..];
        let worker = match instance(rest[0], "worker") {
            Some(w) => {
                rest = &rest[1..];
                Some(w)
            }
            None => None,
        };
        if rest.is_empty() || matches!(rest, ["cumulative"] | ["instantaneous"]) {
            return Err(malformed(name, "missing metric"));
        }
        if !rest.iter().all(|s| ok_ident(s)) {
            return Err(malformed(name, "bad metric"));
        }
        Ok(CounterPath {
            component: component.to_string(),
            locality,
            worker,
            metric: rest.join("/"),
        })
    }
}

impl fmt::Display for CounterPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}/locality#{}", self.component, self.locality)?;
        if let Some(w) = self.worker {
            write!(f, "/worker#{w}")?;
        }
        write!(f, "/{}", self.metric)
    }
}

impl CounterPath {
    /// Kind implied by a `/cumulative` or `/instantaneous` suffix.
    pub fn implied_kind(&self) -> Option<CounterKind> {
        if self.metric.ends_with("/cumulative") {
            Some(CounterKind::Monotonic)
        } else if self.metric.ends_with("/instantaneous") {
            Some(CounterKind::Gauge)
        } else {
            None
        }
    }
}

pub type Sampler = Arc<dyn Fn() -> i64 + Send + Sync>;

/// A counter to register.
#[derive(Clone)]
pub struct CounterDescriptor {
    pub name: String,
    pub kind: CounterKind,
    pub sampler: Sampler,
}

impl fmt::Debug for CounterDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CounterDescriptor")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .finish()
    }
}

impl CounterDescriptor {
    pub fn new<F>(name: impl Into<String>, kind: CounterKind, sampler: F) -> Self
    where
        F: Fn() -> i64 + Send + Sync + 'static,
    {
        CounterDescriptor {
            name: name.into(),
            kind,
            sampler: Arc::new(sampler),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterStatus {
    Ok,
    Unavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterValue {
    pub value: i64,
    /// Nanoseconds since the sampling runtime booted.
    pub sampled_at_ns: u64,
    pub status: CounterStatus,
}

impl CounterValue {
    pub fn unavailable() -> Self {
        CounterValue {
            value: 0,
            sampled_at_ns: 0,
            status: CounterStatus::Unavailable,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == CounterStatus::Ok
    }
}

struct Entry {
    kind: CounterKind,
    sampler: Sampler,
    baseline: AtomicI64,
}

/// The counters of one locality.
pub struct CounterRegistry {
    locality: u32,
    epoch: Instant,
    entries: RwLock<BTreeMap<String, Arc<Entry>>>,
}

impl CounterRegistry {
    pub fn new(locality: u32, epoch: Instant) -> Self {
        CounterRegistry {
            locality,
            epoch,
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    /// Validates and adds a counter owned by this locality.
    pub fn register(&self, desc: CounterDescriptor) -> Result<()> {
        let path: CounterPath = desc.name.parse()?;
        if path.locality != self.locality {
            return Err(Error::WrongLocality(format!(
                "{} names locality {}, registering on {}",
                desc.name, path.locality, self.locality
            )));
        }
        if let Some(k) = path.implied_kind() {
            if k != desc.kind {
                return Err(malformed(&desc.name, "suffix disagrees with kind"));
            }
        }
        let mut entries = self.entries.write();
        if entries.contains_key(&desc.name) {
            return Err(Error::AlreadyExists(format!("counter {:?}", desc.name)));
        }
        entries.insert(
            desc.name,
            Arc::new(Entry {
                kind: desc.kind,
                sampler: desc.sampler,
                baseline: AtomicI64::new(0),
            }),
        );
        Ok(())
    }

    pub fn unregister(&self, name: &str) -> bool {
        self.entries.write().remove(name).is_some()
    }

    pub fn sample(&self, name: &str) -> CounterValue {
        let Some(e) = self.entries.read().get(name).cloned() else {
            return CounterValue::unavailable();
        };
        let raw = (e.sampler)();
        CounterValue {
            value: raw - e.baseline.load(Ordering::SeqCst),
            sampled_at_ns: self.epoch.elapsed().as_nanos() as u64,
            status: CounterStatus::Ok,
        }
    }

    /// Subsequent samples of a monotonic counter report the delta from now.
    pub fn reset(&self, name: &str) -> Result<()> {
        let e = self
            .entries
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("counter {name:?}")))?;
        if e.kind == CounterKind::Gauge {
            return Err(Error::Unsupported(format!("{name} is a gauge and cannot be reset")));
        }
        e.baseline.store((e.sampler)(), Ordering::SeqCst);
        Ok(())
    }

    pub fn names(&self, prefix: &str) -> Vec<String> {
        self.entries
            .read()
            .keys()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect()
    }
}
