//! Active global address space: identities, per-locality object tables,
//! home-locality authority rows, resolution caches and the name service.
//!
//! This module holds the tables only. The protocols that keep them
//! consistent across localities live with the runtime.

pub mod component;
mod gid;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::parcelport::Parcel;

pub use component::{ActionContext, ChannelObject, Component, CounterObject, Factory, LocalityObject};
pub use gid::Gid;
pub(crate) use gid::GidAllocator;

/// Longest accepted symbolic name, in bytes.
pub const MAX_NAME_LEN: usize = 255;

/// Checks a symbolic name: printable ASCII path starting with `/`.
pub fn validate_name(name: &str) -> Result<()> {
    if !name.starts_with('/') {
        return Err(Error::InvalidArgument(format!("name {name:?} must start with '/'")));
    }
    if name.len() > MAX_NAME_LEN {
        return Err(Error::InvalidArgument(format!(
            "name is {} bytes, limit {MAX_NAME_LEN}",
            name.len()
        )));
    }
    if !name.bytes().all(|b| b.is_ascii_graphic()) {
        return Err(Error::InvalidArgument(format!(
            "name {name:?} has non-printable or non-ASCII bytes"
        )));
    }
    Ok(())
}

/// What a name refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameKind {
    Object = 0,
    Counter = 1,
}

impl NameKind {
    pub(crate) fn from_i64(v: i64) -> Option<NameKind> {
        match v {
            0 => Some(NameKind::Object),
            1 => Some(NameKind::Counter),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Live,
    Migrating,
}

type Callback = Box<dyn FnOnce() + Send>;

struct ObjectEntry {
    handle: Arc<dyn Component>,
    status: Status,
    in_flight: usize,
    queued: Vec<Parcel>,
    on_quiesce: Option<Callback>,
}

/// Outcome of presenting a parcel to the local object table.
pub(crate) enum Admission {
    /// The object is here; the caller must later call [`Agas::leave`].
    Run(Arc<dyn Component>, Parcel),
    /// The object is migrating away; the parcel was parked.
    Queued,
    /// Not here.
    Absent(Parcel),
}

pub(crate) enum MigrationStart {
    NotHere,
    Busy,
    AlreadyThere,
    /// No handler is running; state may be captured now.
    Now,
    /// Handlers are running; the callback fires when the last one ends.
    Deferred,
}

pub(crate) struct Agas {
    locality: u32,
    alloc: GidAllocator,
    objects: Mutex<HashMap<Gid, ObjectEntry>>,
    authority: Mutex<HashMap<Gid, u32>>,
    cache: Mutex<HashMap<Gid, (u32, Instant)>>,
    names: Mutex<BTreeMap<String, (Gid, NameKind)>>,
    migrations: AtomicU64,
}

impl Agas {
    pub(crate) fn new(locality: u32, generation: u32) -> Agas {
        Agas {
            locality,
            alloc: GidAllocator::new(locality, generation),
            objects: Mutex::new(HashMap::new()),
            authority: Mutex::new(HashMap::new()),
            cache: Mutex::new(HashMap::new()),
            names: Mutex::new(BTreeMap::new()),
            migrations: AtomicU64::new(0),
        }
    }

    pub(crate) fn mint(&self) -> Gid {
        self.alloc.mint()
    }

    /// Mints a GID for `handle`, makes it live here and creates its
    /// authority row.
    pub(crate) fn register(&self, handle: Arc<dyn Component>) -> Gid {
        let gid = self.mint();
        self.insert(gid, handle).expect("fresh gid");
        self.authority.lock().insert(gid, self.locality);
        gid
    }

    /// Makes `gid` live here (used when an object arrives by migration).
    pub(crate) fn insert(&self, gid: Gid, handle: Arc<dyn Component>) -> Result<()> {
        let mut objects = self.objects.lock();
        if objects.contains_key(&gid) {
            return Err(Error::AlreadyExists(format!("object {gid}")));
        }
        objects.insert(
            gid,
            ObjectEntry {
                handle,
                status: Status::Live,
                in_flight: 0,
                queued: Vec::new(),
                on_quiesce: None,
            },
        );
        drop(objects);
        self.cache.lock().remove(&gid);
        Ok(())
    }

    pub(crate) fn local(&self, gid: Gid) -> Option<Arc<dyn Component>> {
        self.objects.lock().get(&gid).map(|e| e.handle.clone())
    }

    pub(crate) fn status(&self, gid: Gid) -> Option<Status> {
        self.objects.lock().get(&gid).map(|e| e.status)
    }

    pub(crate) fn admit(&self, p: Parcel) -> Admission {
        let mut objects = self.objects.lock();
        match objects.get_mut(&p.dest) {
            Some(e) if e.status == Status::Live => {
                e.in_flight += 1;
                Admission::Run(e.handle.clone(), p)
            }
            Some(e) => {
                e.queued.push(p);
                Admission::Queued
            }
            None => Admission::Absent(p),
        }
    }

    /// Starts a handler on a live local object without a parcel.
    pub(crate) fn enter(&self, gid: Gid) -> Option<Arc<dyn Component>> {
        let mut objects = self.objects.lock();
        match objects.get_mut(&gid) {
            Some(e) if e.status == Status::Live => {
                e.in_flight += 1;
                Some(e.handle.clone())
            }
            _ => None,
        }
    }

    /// Ends a handler started by `admit` or `enter`.
    pub(crate) fn leave(&self, gid: Gid) {
        let cb = {
            let mut objects = self.objects.lock();
            let Some(e) = objects.get_mut(&gid) else { return };
            e.in_flight -= 1;
            if e.in_flight == 0 {
                e.on_quiesce.take()
            } else {
                None
            }
        };
        if let Some(cb) = cb {
            cb();
        }
    }

    pub(crate) fn begin_migration<F>(&self, gid: Gid, dest: u32, on_quiesce: F) -> MigrationStart
    where
        F: FnOnce() + Send + 'static,
    {
        let mut objects = self.objects.lock();
        let Some(e) = objects.get_mut(&gid) else {
            return MigrationStart::NotHere;
        };
        if e.status == Status::Migrating {
            return MigrationStart::Busy;
        }
        if dest == self.locality {
            return MigrationStart::AlreadyThere;
        }
        e.status = Status::Migrating;
        if e.in_flight == 0 {
            MigrationStart::Now
        } else {
            e.on_quiesce = Some(Box::new(on_quiesce));
            MigrationStart::Deferred
        }
    }

    /// Drops the local handle after a successful transfer and returns the
    /// parcels that were parked meanwhile.
    pub(crate) fn finish_migration(&self, gid: Gid, dest: u32) -> Vec<Parcel> {
        let entry = self.objects.lock().remove(&gid);
        self.cache.lock().insert(gid, (dest, Instant::now()));
        self.migrations.fetch_add(1, Ordering::Relaxed);
        entry.map(|e| e.queued).unwrap_or_default()
    }

    /// Reverts a failed migration.
    pub(crate) fn abort_migration(&self, gid: Gid) -> Vec<Parcel> {
        let mut objects = self.objects.lock();
        match objects.get_mut(&gid) {
            Some(e) => {
                e.status = Status::Live;
                std::mem::take(&mut e.queued)
            }
            None => Vec::new(),
        }
    }

    /// Removes a live, idle, local object.
    pub(crate) fn remove(&self, gid: Gid) -> Result<Arc<dyn Component>> {
        let mut objects = self.objects.lock();
        match objects.get(&gid) {
            None => Err(Error::WrongLocality(format!(
                "object {gid} does not live on locality {}",
                self.locality
            ))),
            Some(e) if e.status == Status::Migrating => {
                Err(Error::Busy(format!("object {gid} is migrating")))
            }
            Some(_) => Ok(objects.remove(&gid).expect("present").handle),
        }
    }

    pub(crate) fn live_objects(&self) -> usize {
        self.objects.lock().len()
    }

    pub(crate) fn migrations(&self) -> u64 {
        self.migrations.load(Ordering::Relaxed)
    }

    pub(crate) fn authority(&self, gid: Gid) -> Option<u32> {
        self.authority.lock().get(&gid).copied()
    }

    /// Moves an existing authority row. Fails if the row is gone.
    pub(crate) fn update_authority(&self, gid: Gid, locality: u32) -> Result<()> {
        match self.authority.lock().get_mut(&gid) {
            Some(l) => {
                *l = locality;
                Ok(())
            }
            None => Err(Error::NotFound(format!("object {gid}"))),
        }
    }

    pub(crate) fn remove_authority(&self, gid: Gid) -> Option<u32> {
        self.authority.lock().remove(&gid)
    }

    pub(crate) fn cached(&self, gid: Gid) -> Option<u32> {
        self.cache.lock().get(&gid).map(|&(l, _)| l)
    }

    pub(crate) fn cache(&self, gid: Gid, locality: u32) {
        if locality != self.locality {
            self.cache.lock().insert(gid, (locality, Instant::now()));
        }
    }

    pub(crate) fn clear_cache(&self) {
        self.cache.lock().clear();
    }

    /// Registers every entry or none.
    pub(crate) fn register_names(&self, entries: &[(String, Gid, NameKind)]) -> Result<()> {
        for (name, gid, _) in entries {
            validate_name(name)?;
            if gid.is_null() {
                return Err(Error::InvalidArgument(format!("null gid for {name:?}")));
            }
        }
        let mut names = self.names.lock();
        for (i, (name, _, _)) in entries.iter().enumerate() {
            if names.contains_key(name) || entries[..i].iter().any(|(n, _, _)| n == name) {
                return Err(Error::AlreadyExists(format!("name {name:?}")));
            }
        }
        for (name, gid, kind) in entries {
            names.insert(name.clone(), (*gid, *kind));
        }
        Ok(())
    }

    pub(crate) fn resolve_name(&self, name: &str) -> Result<Gid> {
        self.names
            .lock()
            .get(name)
            .map(|&(g, _)| g)
            .ok_or_else(|| Error::NotFound(format!("name {name:?}")))
    }

    /// Sorted names under `prefix`, optionally of one kind.
    pub(crate) fn list_names(&self, prefix: &str, kind: Option<NameKind>) -> Vec<String> {
        self.names
            .lock()
            .range(prefix.to_string()..)
            .take_while(|(n, _)| n.starts_with(prefix))
            .filter(|(_, &(_, k))| kind.is_none_or(|want| want == k))
            .map(|(n, _)| n.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::atomic::AtomicBool;

    fn parcel(dest: Gid) -> Parcel {
        Parcel {
            dest,
            action_id: 0x1234,
            continuation: Gid::NULL,
            source_locality: 0,
            seq_no: 1,
            forwarded: false,
            payload: vec![],
        }
    }

    fn counter() -> Arc<dyn Component> {
        Arc::new(CounterObject::new(0))
    }

    #[test]
    fn register_mints_distinct_home_gids() {
        let a = Agas::new(3, 7);
        let g1 = a.register(counter());
        let g2 = a.register(counter());
        assert_ne!(g1, g2);
        assert_eq!((g1.home_locality, g1.generation), (3, 7));
        assert_eq!(a.authority(g1), Some(3));
        assert!(a.local(g1).is_some());
        assert_eq!(a.live_objects(), 2);
    }

    #[test]
    fn ten_thousand_gids_over_two_localities_are_distinct() {
        let l0 = Agas::new(0, 1);
        let l1 = Agas::new(1, 1);
        let mut seen = HashSet::new();
        for i in 0..10_000 {
            let g = if i % 2 == 0 { l0.mint() } else { l1.mint() };
            assert!(!g.is_null());
            assert!(seen.insert(g));
        }
        assert_eq!(seen.len(), 10_000);
    }

    #[test]
    fn names() {
        let a = Agas::new(0, 1);
        let g = a.mint();
        a.register_names(&[("/chan/demo".into(), g, NameKind::Object)])
            .unwrap();
        assert_eq!(a.resolve_name("/chan/demo"), Ok(g));
        let other = a.mint();
        assert!(matches!(
            a.register_names(&[("/chan/demo".into(), other, NameKind::Object)]),
            Err(Error::AlreadyExists(_))
        ));
        assert_eq!(a.resolve_name("/chan/demo"), Ok(g));
        assert!(matches!(a.resolve_name("/nope"), Err(Error::NotFound(_))));
        assert!(matches!(validate_name("no-slash"), Err(Error::InvalidArgument(_))));
        assert!(validate_name(&format!("/{}", "x".repeat(255))).is_err());
        assert!(validate_name("/a b").is_err());
    }

    #[test]
    fn batch_name_registration_is_all_or_nothing() {
        let a = Agas::new(0, 1);
        let g = a.mint();
        let r = a.register_names(&[
            ("/x/1".into(), g, NameKind::Counter),
            ("/x/1".into(), g, NameKind::Counter),
        ]);
        assert!(r.is_err());
        assert!(a.list_names("/", None).is_empty());
    }

    #[test]
    fn list_is_sorted_prefix_and_kind_filtered() {
        let a = Agas::new(0, 1);
        let g = a.mint();
        a.register_names(&[
            ("/b/2".into(), g, NameKind::Counter),
            ("/a/1".into(), g, NameKind::Object),
            ("/b/1".into(), g, NameKind::Counter),
            ("/ba".into(), g, NameKind::Object),
        ])
        .unwrap();
        assert_eq!(a.list_names("/b/", None), vec!["/b/1", "/b/2"]);
        assert_eq!(a.list_names("/", Some(NameKind::Object)), vec!["/a/1", "/ba"]);
        assert!(a.list_names("/zzz", None).is_empty());
    }

    #[test]
    fn migration_waits_for_running_handlers_and_parks_parcels() {
        let a = Agas::new(0, 1);
        let g = a.register(counter());
        let Admission::Run(_, _) = a.admit(parcel(g)) else { panic!("live object") };
        let fired = Arc::new(AtomicBool::new(false));
        let f = fired.clone();
        assert!(matches!(
            a.begin_migration(g, 1, move || f.store(true, Ordering::SeqCst)),
            MigrationStart::Deferred
        ));
        assert!(matches!(a.begin_migration(g, 1, || {}), MigrationStart::Busy));
        assert!(matches!(a.admit(parcel(g)), Admission::Queued));
        assert!(a.enter(g).is_none());
        assert!(!fired.load(Ordering::SeqCst));
        a.leave(g);
        assert!(fired.load(Ordering::SeqCst));
        let parked = a.finish_migration(g, 1);
        assert_eq!(parked.len(), 1);
        assert!(a.local(g).is_none());
        assert_eq!(a.cached(g), Some(1));
        assert_eq!(a.migrations(), 1);
        assert!(matches!(a.admit(parcel(g)), Admission::Absent(_)));
    }

    #[test]
    fn migration_edge_cases() {
        let a = Agas::new(0, 1);
        let g = a.register(counter());
        assert!(matches!(a.begin_migration(g, 0, || {}), MigrationStart::AlreadyThere));
        assert!(matches!(a.begin_migration(a.mint(), 1, || {}), MigrationStart::NotHere));
        assert!(matches!(a.begin_migration(g, 1, || {}), MigrationStart::Now));
        assert!(matches!(a.admit(parcel(g)), Admission::Queued));
        assert_eq!(a.abort_migration(g).len(), 1);
        assert_eq!(a.status(g), Some(Status::Live));
    }

    #[test]
    fn remove_only_local_idle_objects() {
        let a = Agas::new(0, 1);
        let g = a.register(counter());
        assert!(matches!(a.remove(a.mint()), Err(Error::WrongLocality(_))));
        a.remove(g).unwrap();
        assert!(a.local(g).is_none());
    }

    #[test]
    fn cache_never_points_home() {
        let a = Agas::new(2, 1);
        let g = Gid::new(0, 1, 5);
        a.cache(g, 2);
        assert_eq!(a.cached(g), None);
        a.cache(g, 1);
        assert_eq!(a.cached(g), Some(1));
        a.clear_cache();
        assert_eq!(a.cached(g), None);
    }
}
