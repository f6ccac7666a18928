//! Handlers for the reserved action ids. They run inline on the thread that
//! received the parcel and must never block.

use std::sync::atomic::Ordering;

use super::{args_of, encode_counter_value, Runtime};
use crate::agas::{Gid, MigrationStart, NameKind};
use crate::error::{DecodeError, Error, Result};
use crate::parcelport::action::system as sys;
use crate::parcelport::{Parcel, Value};

fn gid_arg(args: &[Value], i: usize) -> Result<Gid> {
    args.get(i)
        .and_then(Value::as_gid)
        .ok_or_else(|| DecodeError::new("args", format!("argument {i} must be a gid")).into())
}

fn int_arg(args: &[Value], i: usize) -> Result<i64> {
    args.get(i)
        .and_then(Value::as_int)
        .ok_or_else(|| DecodeError::new("args", format!("argument {i} must be an int")).into())
}

fn str_arg(args: &[Value], i: usize) -> Result<&str> {
    args.get(i)
        .and_then(Value::as_str)
        .ok_or_else(|| DecodeError::new("args", format!("argument {i} must be a string")).into())
}

fn locality_arg(rt: &Runtime, args: &[Value], i: usize) -> Result<u32> {
    let l = int_arg(args, i)?;
    if l < 0 || l >= rt.inner.n as i64 {
        return Err(Error::InvalidArgument(format!("no locality {l}")));
    }
    Ok(l as u32)
}

fn names_value(names: Vec<String>) -> Value {
    Value::List(names.iter().map(|n| Value::str(n)).collect())
}

impl Runtime {
    pub(super) fn system(&self, p: Parcel) {
        let args = match args_of(&p) {
            Ok(a) => a,
            Err(e) => return self.reply(p.continuation, p.action_id, Err(e)),
        };
        let (cont, id) = (p.continuation, p.action_id);
        let agas = &self.inner.agas;
        let r: Result<Value> = match id {
            sys::HELLO => return,
            sys::SHUTDOWN => {
                log::info!("locality {}: shutdown requested by {}", self.inner.me, p.source_locality);
                self.inner.transport.expect_departures();
                self.inner.request_local_shutdown();
                Ok(Value::Unit)
            }
            sys::BARRIER_ARRIVE => {
                if self.inner.me != 0 {
                    Err(Error::WrongLocality("barriers are coordinated by locality 0".into()))
                } else {
                    let released = {
                        let mut b = self.inner.barrier.lock();
                        b.push((cont, id));
                        if b.len() as u32 >= self.inner.n {
                            std::mem::take(&mut *b)
                        } else {
                            Vec::new()
                        }
                    };
                    for (c, a) in released {
                        self.reply(c, a, Ok(Value::Unit));
                    }
                    return;
                }
            }
            sys::RESOLVE => gid_arg(&args, 0).and_then(|g| {
                if agas.local(g).is_some() {
                    return Ok(Value::Int(self.inner.me as i64));
                }
                agas.authority(g)
                    .map(|l| Value::Int(l as i64))
                    .ok_or_else(|| Error::NotFound(format!("object {g}")))
            }),
            sys::CACHE_UPDATE => {
                if let (Ok(g), Ok(l)) = (gid_arg(&args, 0), locality_arg(self, &args, 1)) {
                    if agas.status(g).is_none() {
                        agas.cache(g, l);
                    }
                }
                Ok(Value::Unit)
            }
            sys::NAME_REGISTER => self.name_register(&args),
            sys::NAME_RESOLVE => str_arg(&args, 0).and_then(|n| agas.resolve_name(n)).map(Value::from),
            sys::NAME_LIST => str_arg(&args, 0).map(|pre| names_value(agas.list_names(pre, None))),
            sys::COUNTER_LIST => {
                str_arg(&args, 0).map(|pre| names_value(agas.list_names(pre, Some(NameKind::Counter))))
            }
            sys::COUNTER_SAMPLE => {
                str_arg(&args, 0).map(|n| encode_counter_value(&self.inner.counters.sample(n)))
            }
            sys::COUNTER_RESET => str_arg(&args, 0)
                .and_then(|n| self.inner.counters.reset(n))
                .map(|_| Value::Unit),
            sys::AUTHORITY_UPDATE => gid_arg(&args, 0).and_then(|g| {
                let l = locality_arg(self, &args, 1)?;
                agas.update_authority(g, l)?;
                Ok(Value::Unit)
            }),
            sys::AUTHORITY_REMOVE => gid_arg(&args, 0).map(|g| {
                agas.remove_authority(g);
                Value::Unit
            }),
            sys::MIGRATE => match locality_arg(self, &args, 0) {
                Ok(dest) => return self.migrate_here(p, dest),
                Err(e) => Err(e),
            },
            sys::MIGRATE_TRANSFER => return self.accept_transfer(cont, id, &args),
            other => Err(Error::UnknownAction(format!("reserved id {other:#x}"))),
        };
        self.reply(cont, id, r);
    }

    fn name_register(&self, args: &[Value]) -> Result<Value> {
        let bad = || DecodeError::new("names", "expected [[name, gid, kind], ...]");
        let list = args.first().and_then(Value::as_list).ok_or_else(bad)?;
        let mut entries = Vec::with_capacity(list.len());
        for e in list {
            match e.as_list() {
                Some([n, g, k]) => {
                    let name = n.as_str().ok_or_else(bad)?;
                    let gid = g.as_gid().ok_or_else(bad)?;
                    let kind = k.as_int().and_then(NameKind::from_i64).ok_or_else(bad)?;
                    entries.push((name.to_string(), gid, kind));
                }
                _ => return Err(bad().into()),
            }
        }
        self.inner.agas.register_names(&entries)?;
        Ok(Value::Unit)
    }

    /// First half of a migration, run where the object currently lives.
    fn migrate_here(&self, p: Parcel, dest: u32) {
        let gid = p.dest;
        let (cont, id) = (p.continuation, p.action_id);
        let rt = self.clone();
        match self
            .inner
            .agas
            .begin_migration(gid, dest, move || rt.ship(gid, dest, cont, id))
        {
            MigrationStart::NotHere => self.forward(p),
            MigrationStart::Busy => self.reply(cont, id, Err(Error::Busy(format!("object {gid} is migrating")))),
            MigrationStart::AlreadyThere => self.reply(cont, id, Ok(Value::Unit)),
            MigrationStart::Now => self.ship(gid, dest, cont, id),
            MigrationStart::Deferred => {
                log::debug!("locality {}: migration of {gid} waits for running actions", self.inner.me)
            }
        }
    }

    /// Sends a quiescent object's state to `dest`, then hands over the
    /// parcels parked while it was moving.
    fn ship(&self, gid: Gid, dest: u32, cont: Gid, id: u64) {
        let Some(obj) = self.inner.agas.local(gid) else {
            return self.reply(cont, id, Err(Error::NotFound(format!("object {gid}"))));
        };
        let state = match crate::tasking::catch(|| obj.save()) {
            Ok(s) => s,
            Err(e) => return self.abort_ship(gid, cont, id, e),
        };
        let args = vec![gid.into(), Value::str(obj.type_name()), state];
        let rt = self.clone();
        self.system_request(dest, sys::MIGRATE_TRANSFER, args)
            .on_complete(move |r| match r {
                Ok(_) => {
                    let parked = rt.inner.agas.finish_migration(gid, dest);
                    log::debug!(
                        "locality {}: {gid} moved to {dest}, relaying {} parked parcel(s)",
                        rt.inner.me,
                        parked.len()
                    );
                    for mut q in parked {
                        let (c, a) = (q.continuation, q.action_id);
                        q.forwarded = true;
                        rt.inner.transport.stats.forwarded.fetch_add(1, Ordering::Relaxed);
                        if let Err(e) = rt.inner.transport.send(dest, q, false) {
                            rt.reply(c, a, Err(e));
                        }
                    }
                    rt.reply(cont, id, Ok(Value::Unit));
                }
                Err(e) => rt.abort_ship(gid, cont, id, e.clone()),
            });
    }

    fn abort_ship(&self, gid: Gid, cont: Gid, id: u64, e: Error) {
        log::warn!("locality {}: migration of {gid} failed: {e}", self.inner.me);
        for q in self.inner.agas.abort_migration(gid) {
            self.deliver_user(q);
        }
        self.reply(cont, id, Err(e));
    }

    /// Second half of a migration, run at the destination.
    fn accept_transfer(&self, cont: Gid, id: u64, args: &[Value]) {
        let built = (|| {
            let gid = gid_arg(args, 0)?;
            let ty = str_arg(args, 1)?;
            let state = args
                .get(2)
                .cloned()
                .ok_or_else(|| DecodeError::new("args", "missing state"))?;
            let obj = self.inner.factories.read().build(ty, state)?;
            self.inner.agas.insert(gid, obj)?;
            Ok(gid)
        })();
        let gid = match built {
            Ok(g) => g,
            Err(e) => return self.reply(cont, id, Err(e)),
        };
        let home = gid.home_locality;
        if home == self.inner.me {
            let r = self.inner.agas.update_authority(gid, self.inner.me);
            if r.is_err() {
                let _ = self.inner.agas.remove(gid);
            }
            return self.reply(cont, id, r.map(|_| Value::Unit));
        }
        let rt = self.clone();
        self.system_request(home, sys::AUTHORITY_UPDATE, vec![gid.into(), Value::Int(self.inner.me as i64)])
            .on_complete(move |r| {
                if r.is_err() {
                    let _ = rt.inner.agas.remove(gid);
                }
                rt.reply(cont, id, r.clone());
            });
    }
}
