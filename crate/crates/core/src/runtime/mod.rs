//! Per-process runtime instance ("locality"). Owns boot and the public API,
//! and runs the protocols that connect the subsystems.

mod cluster;
pub mod config;
mod system;

use std::collections::HashMap;
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};

use crate::agas::component::{builtin_actions, builtin_factories, FactoryRegistry};
use crate::agas::{
    validate_name, Admission, Agas, ChannelObject, Component, CounterObject, Factory, Gid, LocalityObject,
    NameKind,
};
use crate::counters::{CounterDescriptor, CounterKind, CounterPath, CounterRegistry, CounterStatus, CounterValue};
use crate::error::{DecodeError, Error, Result};
use crate::parcelport::action::system as sys;
use crate::parcelport::transport::{Events, Transport};
use crate::parcelport::{Action, ActionRegistry, Parcel, Value};
use crate::scheduler::{Priority, Scheduler};
use crate::tasking::{catch, pair_with, Channel, Future, Promise};

pub use crate::agas::ActionContext;
pub use cluster::Cluster;
pub use config::RuntimeConfig;

/// Where an object lives, as seen from the asking locality.
#[derive(Clone, Debug)]
pub struct Resolution {
    pub locality: u32,
    /// Present only when the object lives on the asking locality.
    pub handle: Option<Arc<dyn Component>>,
}

/// Wire-traffic totals of one locality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParcelCounts {
    pub sent: u64,
    pub received: u64,
    pub forwarded: u64,
    pub bytes_sent: u64,
}

struct Pending {
    promise: Promise<Value>,
    peer: u32,
}

pub(crate) struct Inner {
    this: Weak<Inner>,
    me: u32,
    n: u32,
    cfg: RuntimeConfig,
    sched: Scheduler,
    agas: Agas,
    actions: RwLock<ActionRegistry>,
    factories: RwLock<FactoryRegistry>,
    counters: CounterRegistry,
    transport: Arc<Transport>,
    pending: Mutex<HashMap<Gid, Pending>>,
    barrier: Mutex<Vec<(Gid, u64)>>,
    locality_object: Arc<dyn Component>,
    stopped: AtomicBool,
    shutdown_requested: Mutex<bool>,
    shutdown_cv: Condvar,
}

/// Handle to a booted locality. Cloning is cheap.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("locality", &self.inner.me)
            .field("localities", &self.inner.n)
            .finish()
    }
}

pub(crate) fn encode_result(r: &Result<Value>) -> Vec<u8> {
    match r {
        Ok(v) => Value::List(vec![Value::Int(0), v.clone()]).encode(),
        Err(e) => Value::List(vec![
            Value::Int(1),
            Value::Int(e.code()),
            Value::Bytes(e.detail().into_bytes()),
        ])
        .encode(),
    }
}

pub(crate) fn decode_result(bytes: &[u8]) -> Result<Value> {
    let items = Value::decode(bytes)?
        .into_list()
        .ok_or_else(|| DecodeError::new("result", "not a list"))?;
    match items.as_slice() {
        [Value::Int(0), v] => Ok(v.clone()),
        [Value::Int(1), Value::Int(code), Value::Bytes(d)] => {
            Err(Error::from_code(*code, String::from_utf8_lossy(d).into_owned()))
        }
        _ => Err(DecodeError::new("result", "unexpected shape").into()),
    }
}

pub(crate) fn args_of(p: &Parcel) -> Result<Vec<Value>> {
    Ok(Value::decode(&p.payload)?
        .into_list()
        .ok_or_else(|| DecodeError::new("payload", "arguments must be a list"))?)
}

/// Guarantees a handler's result callback runs once, even if the task
/// holding it is discarded.
struct Completion(Option<Box<dyn FnOnce(Result<Value>) + Send>>);

impl Completion {
    fn finish(mut self, r: Result<Value>) {
        if let Some(f) = self.0.take() {
            f(r);
        }
    }
}

impl Drop for Completion {
    fn drop(&mut self) {
        if let Some(f) = self.0.take() {
            f(Err(Error::Shutdown));
        }
    }
}

impl Events for Inner {
    fn deliver(&self, p: Parcel) {
        if let Some(rt) = self.runtime() {
            rt.dispatch(p);
        }
    }

    fn peer_lost(&self, peer: u32) {
        let failed: Vec<Pending> = {
            let mut pending = self.pending.lock();
            let keys: Vec<Gid> = pending
                .iter()
                .filter(|(_, p)| p.peer == peer)
                .map(|(g, _)| *g)
                .collect();
            keys.iter().filter_map(|g| pending.remove(g)).collect()
        };
        if !failed.is_empty() {
            log::warn!(
                "locality {}: failing {} pending request(s) to lost locality {peer}",
                self.me,
                failed.len()
            );
        }
        for p in failed {
            let _ = p
                .promise
                .set_error(Error::Transport(format!("locality {peer} lost")));
        }
        if peer == 0 {
            self.request_local_shutdown();
        }
    }
}

impl Inner {
    fn runtime(&self) -> Option<Runtime> {
        self.this.upgrade().map(|inner| Runtime { inner })
    }

    fn request_local_shutdown(&self) {
        *self.shutdown_requested.lock() = true;
        self.shutdown_cv.notify_all();
    }
}

impl Drop for Inner {
    fn drop(&mut self) {
        self.transport.shutdown();
        self.sched.shutdown(false);
    }
}

impl Runtime {
    /// Boots this locality: starts workers, connects to every peer,
    /// registers built-in counters and waits at the startup barrier.
    pub fn boot(cfg: RuntimeConfig) -> Result<Runtime> {
        Runtime::boot_with(cfg, None, &|_| Ok(()))
    }

    /// As [`Runtime::boot`], accepting peers on an already bound listener.
    pub fn boot_with_listener(cfg: RuntimeConfig, listener: TcpListener) -> Result<Runtime> {
        Runtime::boot_with(cfg, Some(listener), &|_| Ok(()))
    }

    /// The general form of [`Runtime::boot`]. `init` runs before any peer
    /// can reach this locality; register application actions and factories
    /// there so that no parcel can arrive ahead of them.
    pub fn boot_with(
        cfg: RuntimeConfig,
        listener: Option<TcpListener>,
        init: &dyn Fn(&Runtime) -> Result<()>,
    ) -> Result<Runtime> {
        cfg.validate()?;
        let me = cfg.this_locality;
        let n = cfg.num_localities();
        let listener = match (n, listener) {
            (1, _) => None,
            (_, Some(l)) => Some(l),
            (_, None) => {
                let addr = &cfg.localities[me as usize];
                Some(TcpListener::bind(addr).map_err(|e| {
                    Error::Boot(format!("locality {me}: cannot listen on {addr}: {e}"))
                })?)
            }
        };
        let sched = Scheduler::with_name(cfg.scheduler, &format!("amt-L{me}"))?;
        let transport = Transport::new(me, n, cfg.boot_timeout);
        let epoch = Instant::now();
        let inner = Arc::new_cyclic(|this| Inner {
            this: this.clone(),
            me,
            n,
            agas: Agas::new(me, cfg.generation),
            cfg: cfg.clone(),
            sched,
            actions: RwLock::new(ActionRegistry::default()),
            factories: RwLock::new(builtin_factories()),
            counters: CounterRegistry::new(me, epoch),
            transport,
            pending: Mutex::new(HashMap::new()),
            barrier: Mutex::new(Vec::new()),
            locality_object: Arc::new(LocalityObject),
            stopped: AtomicBool::new(false),
            shutdown_requested: Mutex::new(false),
            shutdown_cv: Condvar::new(),
        });
        let rt = Runtime { inner };
        let registered = (|| {
            for a in builtin_actions().into_iter().chain(crate::bench::actions()) {
                rt.register_action(a)?;
            }
            for d in rt.builtin_counters() {
                rt.inner.counters.register(d)?;
            }
            init(&rt)
        })();
        if let Err(e) = registered {
            rt.abort_boot();
            return Err(e);
        }
        let builtins = rt.inner.counters.names("");

        if let Some(listener) = listener {
            let w: Weak<Inner> = Arc::downgrade(&rt.inner);
            let events: Weak<dyn Events> = w;
            if let Err(e) = rt.inner.transport.start(listener, &cfg.localities, events) {
                rt.abort_boot();
                return Err(e);
            }
        }
        let timeout = cfg.boot_timeout;
        let staged = || -> Result<()> {
            let names: Vec<(String, Gid, NameKind)> = builtins
                .into_iter()
                .map(|name| (name, rt.inner.agas.mint(), NameKind::Counter))
                .collect();
            wait_boot(&rt.register_names(names), timeout, "counter registration")?;
            wait_boot(&rt.barrier(), timeout, "startup barrier")
        };
        if let Err(e) = staged() {
            rt.abort_boot();
            return Err(e);
        }
        log::info!("locality {me}/{n} booted ({} workers, {})", cfg.scheduler.workers, cfg.scheduler.policy);
        Ok(rt)
    }

    fn abort_boot(&self) {
        self.inner.stopped.store(true, Ordering::SeqCst);
        self.inner.transport.kill();
        self.inner.sched.shutdown(false);
    }

    pub fn locality(&self) -> u32 {
        self.inner.me
    }

    pub fn num_localities(&self) -> u32 {
        self.inner.n
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.inner.cfg
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.inner.sched
    }

    pub fn is_running(&self) -> bool {
        !self.inner.stopped.load(Ordering::SeqCst)
    }

    // ----- registration ---------------------------------------------------

    /// Adds an action. Every locality that sends or receives it must
    /// register the same name and signature.
    pub fn register_action(&self, action: Action) -> Result<u64> {
        self.inner.actions.write().register(action)
    }

    pub fn action(&self, name: &str) -> Option<Arc<Action>> {
        self.inner.actions.read().by_name(name)
    }

    /// Lets objects of `type_name` migrate to this locality.
    pub fn register_factory(&self, type_name: &str, f: Factory) -> Result<()> {
        self.inner.factories.write().register(type_name, f)
    }

    /// Makes `obj` addressable, with this locality as its home.
    pub fn register_object(&self, obj: Arc<dyn Component>) -> Result<Gid> {
        if !self.is_running() {
            return Err(Error::Shutdown);
        }
        Ok(self.inner.agas.register(obj))
    }

    pub fn new_counter(&self, initial: i64) -> Result<Gid> {
        self.register_object(Arc::new(CounterObject::new(initial)))
    }

    /// The live object behind `gid` if it is on this locality.
    pub fn local_object(&self, gid: Gid) -> Option<Arc<dyn Component>> {
        self.inner.agas.local(gid)
    }

    // ----- parcels --------------------------------------------------------

    fn send_to(&self, to: u32, mut p: Parcel) -> Result<()> {
        if to == self.inner.me {
            p.source_locality = self.inner.me;
            p.seq_no = self.inner.transport.next_seq();
            self.dispatch(p);
            Ok(())
        } else {
            self.inner.transport.send(to, p, true)
        }
    }

    /// Sends a parcel whose reply completes the returned future.
    fn request(&self, to: u32, dest: Gid, action_id: u64, payload: Vec<u8>) -> Future<Value> {
        let (promise, f) = pair_with::<Value>(self.inner.sched.downgrade());
        if to >= self.inner.n {
            let _ = promise.set_error(Error::InvalidArgument(format!("no locality {to}")));
            return f;
        }
        let cont = self.inner.agas.mint();
        self.inner.pending.lock().insert(cont, Pending { promise, peer: to });
        let p = Parcel {
            dest,
            action_id,
            continuation: cont,
            source_locality: self.inner.me,
            seq_no: 0,
            forwarded: false,
            payload,
        };
        if let Err(e) = self.send_to(to, p) {
            let entry = self.inner.pending.lock().remove(&cont);
            if let Some(pd) = entry {
                let _ = pd.promise.set_error(e);
            }
        }
        f
    }

    fn system_request(&self, to: u32, action_id: u64, args: Vec<Value>) -> Future<Value> {
        self.request(to, Gid::locality_service(to), action_id, Value::List(args).encode())
    }

    /// Maps a future without spawning a task; `g` runs on the completing
    /// thread and must be cheap.
    fn map<T, U, G>(&self, f: &Future<T>, g: G) -> Future<U>
    where
        T: Send + Sync + 'static,
        U: Send + Sync + 'static,
        G: FnOnce(&Result<T>) -> Result<U> + Send + 'static,
    {
        let (p, out) = pair_with::<U>(self.inner.sched.downgrade());
        f.on_complete(move |r| {
            let _ = p.set_result(g(r));
        });
        out
    }

    fn complete(&self, cont: Gid, r: Result<Value>) {
        let entry = self.inner.pending.lock().remove(&cont);
        match entry {
            Some(p) => {
                let _ = p.promise.set_result(r);
            }
            None => log::debug!("locality {}: reply for unknown continuation {cont}", self.inner.me),
        }
    }

    /// Routes a handler's result to the continuation's locality.
    pub(crate) fn reply(&self, cont: Gid, request_action: u64, r: Result<Value>) {
        if cont.is_null() {
            if let Err(e) = r {
                log::debug!("locality {}: fire-and-forget action failed: {e}", self.inner.me);
            }
            return;
        }
        let home = cont.home_locality;
        if home == self.inner.me {
            self.complete(cont, r);
            return;
        }
        let action_id = if sys::is_introspection(request_action) {
            sys::COUNTER_REPLY
        } else {
            sys::SET_RESULT
        };
        let p = Parcel {
            dest: cont,
            action_id,
            continuation: Gid::NULL,
            source_locality: self.inner.me,
            seq_no: 0,
            forwarded: false,
            payload: encode_result(&r),
        };
        if let Err(e) = self.inner.transport.send(home, p, true) {
            log::warn!("locality {}: cannot deliver result to locality {home}: {e}", self.inner.me);
        }
    }

    pub(crate) fn dispatch(&self, p: Parcel) {
        match p.action_id {
            sys::SET_RESULT | sys::COUNTER_REPLY => {
                let r = decode_result(&p.payload);
                self.complete(p.dest, r);
            }
            id if id <= crate::parcelport::action::MAX_RESERVED_ID => self.system(p),
            _ => self.deliver_user(p),
        }
    }

    fn deliver_user(&self, p: Parcel) {
        if p.dest.is_locality_service() {
            if p.dest.home_locality != self.inner.me {
                let e = Error::WrongLocality(format!("service parcel for locality {}", p.dest.home_locality));
                self.reply(p.continuation, p.action_id, Err(e));
                return;
            }
            let target = self.inner.locality_object.clone();
            self.run_parcel(target, p, false);
            return;
        }
        match self.inner.agas.admit(p) {
            Admission::Run(target, p) => self.run_parcel(target, p, true),
            Admission::Queued => {}
            Admission::Absent(p) => self.forward(p),
        }
    }

    fn run_parcel(&self, target: Arc<dyn Component>, p: Parcel, tracked: bool) {
        let prepared = (|| {
            let action = self
                .inner
                .actions
                .read()
                .get(p.action_id)
                .ok_or_else(|| Error::UnknownAction(format!("{:#018x}", p.action_id)))?;
            let args = args_of(&p)?;
            action.check(&args)?;
            Ok((action, args))
        })();
        let (gid, cont, action_id) = (p.dest, p.continuation, p.action_id);
        let rt = self.clone();
        let done = move |r: Result<Value>| {
            if tracked {
                rt.inner.agas.leave(gid);
            }
            rt.reply(cont, action_id, r);
        };
        match prepared {
            Err(e) => done(Err(e)),
            Ok((action, args)) => {
                let ctx = ActionContext {
                    runtime: self.clone(),
                    gid,
                    target,
                    source_locality: p.source_locality,
                    seq_no: p.seq_no,
                    forwarded: p.forwarded,
                };
                self.invoke(action, ctx, args, done);
            }
        }
    }

    /// Runs a handler as a task; `done` receives its result exactly once.
    fn invoke<D>(&self, action: Arc<Action>, ctx: ActionContext, args: Vec<Value>, done: D)
    where
        D: FnOnce(Result<Value>) + Send + 'static,
    {
        let c = Completion(Some(Box::new(done)));
        // a rejected submission drops the closure, and with it `c`
        let _ = self.inner.sched.submit_fn(Priority::Normal, None, move || {
            match catch(|| Ok((action.handler)(ctx, args))) {
                Ok(f) => f.on_complete(move |r| c.finish(r.clone())),
                Err(e) => c.finish(Err(e)),
            }
        });
    }

    /// Relays a parcel for an object that is not here.
    fn forward(&self, mut p: Parcel) {
        let me = self.inner.me;
        let gid = p.dest;
        let home = gid.home_locality;
        let (target, authoritative) = if home == me {
            (self.inner.agas.authority(gid), true)
        } else if p.forwarded {
            (Some(home), false)
        } else {
            match self.inner.agas.cached(gid) {
                Some(l) => (Some(l), true),
                None => (Some(home), false),
            }
        };
        let target = match target {
            Some(t) if t != me && t < self.inner.n => t,
            _ => {
                self.reply(p.continuation, p.action_id, Err(Error::NotFound(format!("object {gid}"))));
                return;
            }
        };
        let source = p.source_locality;
        let (cont, action_id) = (p.continuation, p.action_id);
        p.forwarded = true;
        self.inner.transport.stats.forwarded.fetch_add(1, Ordering::Relaxed);
        log::trace!("locality {me}: forwarding parcel for {gid} to {target}");
        if let Err(e) = self.inner.transport.send(target, p, false) {
            self.reply(cont, action_id, Err(e));
            return;
        }
        if authoritative && source != me && source != target {
            let notice = Parcel {
                dest: Gid::locality_service(source),
                action_id: sys::CACHE_UPDATE,
                continuation: Gid::NULL,
                source_locality: me,
                seq_no: 0,
                forwarded: false,
                payload: Value::List(vec![gid.into(), Value::Int(target as i64)]).encode(),
            };
            let _ = self.inner.transport.send(source, notice, true);
        }
    }

    // ----- actions --------------------------------------------------------

    /// Invokes `action` on the object `gid`, wherever it lives. Arguments
    /// are checked against the action's signature before anything is sent.
    pub fn apply(&self, gid: Gid, action: &str, args: Vec<Value>) -> Future<Value> {
        match self.action(action) {
            Some(a) => self.apply_action(gid, a, args),
            None => Future::failed(Error::UnknownAction(action.to_string())),
        }
    }

    pub fn apply_action(&self, gid: Gid, action: Arc<Action>, args: Vec<Value>) -> Future<Value> {
        if let Err(e) = action.check(&args) {
            return Future::failed(e);
        }
        if gid.is_null() {
            return Future::failed(Error::InvalidArgument("null gid".into()));
        }
        let me = self.inner.me;
        if gid.is_locality_service() {
            let to = gid.home_locality;
            if to == me {
                return self.invoke_local(self.inner.locality_object.clone(), gid, action, args, false);
            }
            return self.request(to, gid, action.id, Value::List(args).encode());
        }
        if let Some(target) = self.inner.agas.enter(gid) {
            return self.invoke_local(target, gid, action, args, true);
        }
        self.route(gid, action.id, Value::List(args).encode())
    }

    fn invoke_local(
        &self,
        target: Arc<dyn Component>,
        gid: Gid,
        action: Arc<Action>,
        args: Vec<Value>,
        tracked: bool,
    ) -> Future<Value> {
        let (p, f) = pair_with::<Value>(self.inner.sched.downgrade());
        let rt = self.clone();
        let ctx = ActionContext {
            runtime: self.clone(),
            gid,
            target,
            source_locality: self.inner.me,
            seq_no: 0,
            forwarded: false,
        };
        self.invoke(action, ctx, args, move |r| {
            if tracked {
                rt.inner.agas.leave(gid);
            }
            let _ = p.set_result(r);
        });
        f
    }

    /// Sends a request to wherever `gid` is believed to live, resolving it
    /// first if nothing is known locally.
    fn route(&self, gid: Gid, action_id: u64, payload: Vec<u8>) -> Future<Value> {
        let me = self.inner.me;
        let agas = &self.inner.agas;
        let known = if agas.status(gid).is_some() {
            Some(me)
        } else if gid.home_locality == me {
            match agas.authority(gid) {
                Some(l) => Some(l),
                None => return Future::failed(Error::NotFound(format!("object {gid}"))),
            }
        } else {
            agas.cached(gid)
        };
        if let Some(l) = known {
            return self.request(l, gid, action_id, payload);
        }
        let (p, out) = pair_with::<Value>(self.inner.sched.downgrade());
        let rt = self.clone();
        self.resolve_remote(gid).on_complete(move |r| match r {
            Ok(l) => rt.request(*l, gid, action_id, payload).on_complete(move |r| {
                let _ = p.set_result(r.clone());
            }),
            Err(e) => {
                let _ = p.set_error(e.clone());
            }
        });
        out
    }

    fn resolve_remote(&self, gid: Gid) -> Future<u32> {
        let home = gid.home_locality;
        let rt = self.clone();
        let f = self.system_request(home, sys::RESOLVE, vec![gid.into()]);
        self.map(&f, move |r| {
            let l = r
                .clone()?
                .as_int()
                .ok_or_else(|| DecodeError::new("resolve", "expected an int"))? as u32;
            rt.inner.agas.cache(gid, l);
            Ok(l)
        })
    }

    // ----- address space ---------------------------------------------------

    /// Finds the locality currently holding `gid`. Unless the object is
    /// here, this asks its home locality; cached locations are only routing
    /// hints and may be stale. The answer refreshes the cache.
    pub fn resolve(&self, gid: Gid) -> Future<Resolution> {
        if gid.is_null() {
            return Future::failed(Error::InvalidArgument("null gid".into()));
        }
        let me = self.inner.me;
        let agas = &self.inner.agas;
        if let Some(h) = agas.local(gid) {
            return Future::ready(Resolution { locality: me, handle: Some(h) });
        }
        if gid.home_locality == me {
            return match agas.authority(gid) {
                Some(l) => Future::ready(Resolution { locality: l, handle: None }),
                None => Future::failed(Error::NotFound(format!("object {gid}"))),
            };
        }
        let rt = self.clone();
        self.map(&self.resolve_remote(gid), move |r| {
            let l = r.clone()?;
            Ok(Resolution {
                locality: l,
                handle: if l == me { rt.inner.agas.local(gid) } else { None },
            })
        })
    }

    /// Forgets every cached location.
    pub fn clear_cache(&self) {
        self.inner.agas.clear_cache();
    }

    pub fn cached_location(&self, gid: Gid) -> Option<u32> {
        self.inner.agas.cached(gid)
    }

    /// Moves the object `gid` to locality `dest`. Actions racing the move
    /// are parked and replayed at the destination.
    pub fn migrate(&self, gid: Gid, dest: u32) -> Future<()> {
        if gid.is_null() || gid.is_locality_service() {
            return Future::failed(Error::InvalidArgument(format!("cannot migrate {gid}")));
        }
        if dest >= self.inner.n {
            return Future::failed(Error::InvalidArgument(format!("no locality {dest}")));
        }
        let f = self.route(gid, sys::MIGRATE, Value::List(vec![Value::Int(dest as i64)]).encode());
        self.map(&f, |r| r.clone().map(|_| ()))
    }

    /// Removes a local object and its authority row.
    pub fn unregister(&self, gid: Gid) -> Future<()> {
        if let Err(e) = self.inner.agas.remove(gid) {
            return Future::failed(e);
        }
        let home = gid.home_locality;
        if home == self.inner.me {
            self.inner.agas.remove_authority(gid);
            return Future::ready(());
        }
        let f = self.system_request(home, sys::AUTHORITY_REMOVE, vec![gid.into()]);
        self.map(&f, |r| r.clone().map(|_| ()))
    }

    fn register_names(&self, entries: Vec<(String, Gid, NameKind)>) -> Future<()> {
        let list = entries
            .into_iter()
            .map(|(n, g, k)| Value::List(vec![Value::str(&n), g.into(), Value::Int(k as i64)]))
            .collect();
        let f = self.system_request(0, sys::NAME_REGISTER, vec![Value::List(list)]);
        self.map(&f, |r| r.clone().map(|_| ()))
    }

    /// Binds a global symbolic name to `gid`.
    pub fn register_name(&self, name: &str, gid: Gid) -> Future<()> {
        if let Err(e) = validate_name(name) {
            return Future::failed(e);
        }
        self.register_names(vec![(name.to_string(), gid, NameKind::Object)])
    }

    pub fn resolve_name(&self, name: &str) -> Future<Gid> {
        let f = self.system_request(0, sys::NAME_RESOLVE, vec![Value::str(name)]);
        self.map(&f, |r| {
            r.clone()?
                .as_gid()
                .ok_or_else(|| DecodeError::new("name", "expected a gid").into())
        })
    }

    /// Every registered name under `prefix`, sorted.
    pub fn list_names(&self, prefix: &str) -> Future<Vec<String>> {
        let f = self.system_request(0, sys::NAME_LIST, vec![Value::str(prefix)]);
        self.map(&f, |r| strings(r.clone()?))
    }

    // ----- channels ---------------------------------------------------------

    /// Creates a channel on this locality, optionally under a global name.
    pub fn new_channel(&self, name: Option<&str>) -> Future<Gid> {
        let gid = match self.register_object(Arc::new(ChannelObject::default())) {
            Ok(g) => g,
            Err(e) => return Future::failed(e),
        };
        match name {
            None => Future::ready(gid),
            Some(n) => {
                let rt = self.clone();
                self.map(&self.register_name(n, gid), move |r| match r {
                    Ok(()) => Ok(gid),
                    Err(e) => {
                        let _ = rt.inner.agas.remove(gid);
                        rt.inner.agas.remove_authority(gid);
                        Err(e.clone())
                    }
                })
            }
        }
    }

    /// The channel behind a local channel object.
    pub fn local_channel(&self, gid: Gid) -> Option<Channel<Value>> {
        let obj = self.inner.agas.local(gid)?;
        let any: &dyn std::any::Any = &*obj;
        any.downcast_ref::<ChannelObject>().map(|c| c.channel.clone())
    }

    pub fn channel_send(&self, gid: Gid, v: Value) -> Future<()> {
        let f = self.apply(gid, ChannelObject::SEND, vec![v]);
        self.map(&f, |r| r.clone().map(|_| ()))
    }

    pub fn channel_recv(&self, gid: Gid) -> Future<Value> {
        self.apply(gid, ChannelObject::RECV, vec![])
    }

    // ----- counters ---------------------------------------------------------

    /// Adds an application counter on this locality and publishes its name.
    pub fn register_counter(&self, desc: CounterDescriptor) -> Future<Gid> {
        let name = desc.name.clone();
        if let Err(e) = self.inner.counters.register(desc) {
            return Future::failed(e);
        }
        let gid = self.inner.agas.mint();
        let rt = self.clone();
        let f = self.register_names(vec![(name.clone(), gid, NameKind::Counter)]);
        self.map(&f, move |r| match r {
            Ok(()) => Ok(gid),
            Err(e) => {
                rt.inner.counters.unregister(&name);
                Err(e.clone())
            }
        })
    }

    /// Samples a counter on whichever locality its name designates.
    pub fn query_counter(&self, name: &str) -> Future<CounterValue> {
        let Ok(path) = name.parse::<CounterPath>() else {
            return Future::ready(CounterValue::unavailable());
        };
        if path.locality >= self.inner.n {
            return Future::ready(CounterValue::unavailable());
        }
        if path.locality == self.inner.me {
            return Future::ready(self.inner.counters.sample(name));
        }
        let f = self.system_request(path.locality, sys::COUNTER_SAMPLE, vec![Value::str(name)]);
        self.map(&f, |r| decode_counter_value(&r.clone()?))
    }

    /// Samples a counter of this locality directly.
    pub fn sample_local(&self, name: &str) -> CounterValue {
        self.inner.counters.sample(name)
    }

    pub fn list_counters(&self, prefix: &str) -> Future<Vec<String>> {
        let f = self.system_request(0, sys::COUNTER_LIST, vec![Value::str(prefix)]);
        self.map(&f, |r| strings(r.clone()?))
    }

    pub fn reset_counter(&self, name: &str) -> Future<()> {
        let path = match name.parse::<CounterPath>() {
            Ok(p) => p,
            Err(e) => return Future::failed(e),
        };
        if path.locality == self.inner.me {
            return Future::from_result(self.inner.counters.reset(name));
        }
        let f = self.system_request(path.locality, sys::COUNTER_RESET, vec![Value::str(name)]);
        self.map(&f, |r| r.clone().map(|_| ()))
    }

    pub fn parcel_counts(&self) -> ParcelCounts {
        let s = &self.inner.transport.stats;
        ParcelCounts {
            sent: s.sent.load(Ordering::Relaxed),
            received: s.received.load(Ordering::Relaxed),
            forwarded: s.forwarded.load(Ordering::Relaxed),
            bytes_sent: s.bytes_sent.load(Ordering::Relaxed),
        }
    }

    fn builtin_counters(&self) -> Vec<CounterDescriptor> {
        let l = self.inner.me;
        let weak = Arc::downgrade(&self.inner);
        let with = |f: Box<dyn Fn(&Inner) -> i64 + Send + Sync>| {
            let w = weak.clone();
            move || w.upgrade().map(|i| f(&i)).unwrap_or(0)
        };
        use CounterKind::{Gauge, Monotonic};
        let mut out = vec![
            CounterDescriptor::new(
                format!("/scheduler/locality#{l}/tasks/executed/cumulative"),
                Monotonic,
                with(Box::new(|i| i.sched.stats().tasks_executed() as i64)),
            ),
            CounterDescriptor::new(
                format!("/scheduler/locality#{l}/tasks/pending/instantaneous"),
                Gauge,
                with(Box::new(|i| i.sched.pending() as i64)),
            ),
        ];
        for w in 0..self.inner.sched.workers() {
            let snap = move |f: fn(&crate::scheduler::WorkerSnapshot) -> u64| {
                Box::new(move |i: &Inner| f(&i.sched.stats().workers[w]) as i64)
                    as Box<dyn Fn(&Inner) -> i64 + Send + Sync>
            };
            let base = format!("/scheduler/locality#{l}/worker#{w}");
            out.push(CounterDescriptor::new(
                format!("{base}/tasks/executed/cumulative"),
                Monotonic,
                with(snap(|s| s.tasks_executed)),
            ));
            out.push(CounterDescriptor::new(
                format!("{base}/steals/attempted/cumulative"),
                Monotonic,
                with(snap(|s| s.steal_attempts)),
            ));
            out.push(CounterDescriptor::new(
                format!("{base}/steals/succeeded/cumulative"),
                Monotonic,
                with(snap(|s| s.steals_succeeded)),
            ));
            out.push(CounterDescriptor::new(
                format!("{base}/leaf-fetches/cumulative"),
                Monotonic,
                with(snap(|s| s.leaf_fetches)),
            ));
            out.push(CounterDescriptor::new(
                format!("{base}/queue/length/instantaneous"),
                Gauge,
                with(Box::new(move |i| i.sched.queue_lengths()[w] as i64)),
            ));
        }
        let parcel = |metric: &str, f: fn(&Inner) -> u64| {
            CounterDescriptor::new(
                format!("/parcel/locality#{l}/{metric}/cumulative"),
                Monotonic,
                with(Box::new(move |i| f(i) as i64)),
            )
        };
        out.push(parcel("sent", |i| i.transport.stats.sent.load(Ordering::Relaxed)));
        out.push(parcel("received", |i| i.transport.stats.received.load(Ordering::Relaxed)));
        out.push(parcel("forwarded", |i| i.transport.stats.forwarded.load(Ordering::Relaxed)));
        out.push(parcel("bytes-sent", |i| i.transport.stats.bytes_sent.load(Ordering::Relaxed)));
        for peer in (0..self.inner.n).filter(|p| *p != l) {
            let p = peer as usize;
            out.push(CounterDescriptor::new(
                format!("/parcel/locality#{l}/sent-to#{peer}/cumulative"),
                Monotonic,
                with(Box::new(move |i| i.transport.stats.sent_to[p].load(Ordering::Relaxed) as i64)),
            ));
            out.push(CounterDescriptor::new(
                format!("/parcel/locality#{l}/received-from#{peer}/cumulative"),
                Monotonic,
                with(Box::new(move |i| i.transport.stats.received_from[p].load(Ordering::Relaxed) as i64)),
            ));
        }
        out.push(CounterDescriptor::new(
            format!("/agas/locality#{l}/objects/live/instantaneous"),
            Gauge,
            with(Box::new(|i| i.agas.live_objects() as i64)),
        ));
        out.push(CounterDescriptor::new(
            format!("/agas/locality#{l}/migrations/cumulative"),
            Monotonic,
            with(Box::new(|i| i.agas.migrations() as i64)),
        ));
        out
    }

    // ----- lifecycle --------------------------------------------------------

    /// Completes once every locality has called `barrier`.
    pub fn barrier(&self) -> Future<()> {
        let f = self.system_request(0, sys::BARRIER_ARRIVE, vec![]);
        self.map(&f, |r| r.clone().map(|_| ()))
    }

    /// Blocks until another locality asks this one to stop, locality 0 is
    /// lost, or `timeout` passes. Returns whether a stop was requested.
    pub fn wait_for_shutdown_request(&self, timeout: Option<Duration>) -> bool {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut flag = self.inner.shutdown_requested.lock();
        while !*flag {
            match deadline {
                None => self.inner.shutdown_cv.wait(&mut flag),
                Some(d) => {
                    if self.inner.shutdown_cv.wait_until(&mut flag, d).timed_out() {
                        break;
                    }
                }
            }
        }
        *flag
    }

    /// Asks every other locality to shut down.
    pub fn request_cluster_shutdown(&self) {
        self.inner.transport.expect_departures();
        for peer in (0..self.inner.n).filter(|p| *p != self.inner.me) {
            let p = Parcel {
                dest: Gid::locality_service(peer),
                action_id: sys::SHUTDOWN,
                continuation: Gid::NULL,
                source_locality: self.inner.me,
                seq_no: 0,
                forwarded: false,
                payload: Value::List(vec![]).encode(),
            };
            if let Err(e) = self.inner.transport.send(peer, p, true) {
                log::debug!("shutdown notice to locality {peer}: {e}");
            }
        }
    }

    /// Runs queued work to completion, then closes all connections. Must
    /// not be called from inside a task.
    pub fn shutdown(&self) {
        if self.inner.stopped.swap(true, Ordering::SeqCst) {
            return;
        }
        self.inner.sched.shutdown(true);
        self.inner.transport.shutdown();
        self.fail_pending(Error::Shutdown);
        self.inner.request_local_shutdown();
        log::info!("locality {} stopped", self.inner.me);
    }

    /// Simulates a crash: connections drop without flushing and queued
    /// work is discarded.
    pub fn kill(&self) {
        if self.inner.stopped.swap(true, Ordering::SeqCst) {
            return;
        }
        self.inner.transport.kill();
        self.fail_pending(Error::Transport("locality killed".into()));
        self.inner.request_local_shutdown();
        let sched = self.inner.sched.clone();
        std::thread::spawn(move || sched.shutdown(false));
    }

    fn fail_pending(&self, e: Error) {
        let all: Vec<Pending> = self.inner.pending.lock().drain().map(|(_, p)| p).collect();
        for p in all {
            let _ = p.promise.set_error(e.clone());
        }
    }

    #[cfg(test)]
    pub(crate) fn pending_requests(&self) -> usize {
        self.inner.pending.lock().len()
    }
}

fn wait_boot<T: Clone + Send + Sync + 'static>(f: &Future<T>, timeout: Duration, step: &str) -> Result<T> {
    match f.wait_timeout(timeout) {
        Some(Ok(v)) => Ok(v),
        Some(Err(e)) => Err(Error::Boot(format!("{step}: {e}"))),
        None => Err(Error::Boot(format!("{step} timed out after {timeout:?}"))),
    }
}

fn strings(v: Value) -> Result<Vec<String>> {
    v.into_list()
        .ok_or_else(|| DecodeError::new("names", "expected a list"))?
        .into_iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| DecodeError::new("names", "expected strings").into())
        })
        .collect()
}

pub(crate) fn encode_counter_value(c: &CounterValue) -> Value {
    Value::List(vec![
        Value::Int(c.value),
        Value::Int(c.sampled_at_ns as i64),
        Value::Int(match c.status {
            CounterStatus::Ok => 0,
            CounterStatus::Unavailable => 1,
        }),
    ])
}

fn decode_counter_value(v: &Value) -> Result<CounterValue> {
    match v.as_list() {
        Some([Value::Int(value), Value::Int(at), Value::Int(status)]) => Ok(CounterValue {
            value: *value,
            sampled_at_ns: *at as u64,
            status: if *status == 0 {
                CounterStatus::Ok
            } else {
                CounterStatus::Unavailable
            },
        }),
        _ => Err(DecodeError::new("counter", "unexpected shape").into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_encoding_round_trips() {
        for r in [
            Ok(Value::Int(5)),
            Ok(Value::List(vec![Value::Unit, Value::Float(-0.0)])),
            Err(Error::NotFound("object x".into())),
            Err(Error::Shutdown),
        ] {
            assert_eq!(decode_result(&encode_result(&r)), r);
        }
        assert!(decode_result(&Value::Int(3).encode()).is_err());
    }

    #[test]
    fn counter_value_round_trips() {
        let c = CounterValue {
            value: -4,
            sampled_at_ns: 99,
            status: CounterStatus::Ok,
        };
        assert_eq!(decode_counter_value(&encode_counter_value(&c)).unwrap(), c);
    }

    #[test]
    fn pending_table_drains() {
        use crate::agas::CounterObject;
        use crate::scheduler::{Policy, SchedulerConfig};

        let c = Cluster::start(2, SchedulerConfig::new(Policy::LocalPriority, 2)).unwrap();
        let gid = c.locality(1).new_counter(0).unwrap();
        let calls: Vec<_> = (0..20)
            .map(|_| c.locality(0).apply(gid, CounterObject::ADD, vec![Value::Int(1)]))
            .collect();
        for f in calls {
            f.get().unwrap();
        }
        assert_eq!(c.locality(0).pending_requests(), 0);

        c.locality(1).kill();
        let f = c.locality(0).apply(gid, CounterObject::GET, vec![]);
        assert!(f.get().is_err());
        assert_eq!(c.locality(0).pending_requests(), 0);
    }
}
