use std::net::TcpListener;

use super::{Runtime, RuntimeConfig};
use crate::error::{Error, Result};
use crate::scheduler::SchedulerConfig;

/// Several localities in one process, connected over loopback TCP. Used by
/// tests and benchmarks; each locality is a complete runtime.
#[derive(Debug)]
pub struct Cluster {
    localities: Vec<Runtime>,
}

impl Cluster {
    pub fn start(n: u32, scheduler: SchedulerConfig) -> Result<Cluster> {
        Cluster::start_with(n, |_, cfg| cfg.scheduler = scheduler)
    }

    /// Starts `n` localities, letting `tweak` adjust each one's config
    /// before boot.
    pub fn start_with<F>(n: u32, tweak: F) -> Result<Cluster>
    where
        F: Fn(u32, &mut RuntimeConfig),
    {
        Cluster::start_init(n, tweak, |_| Ok(()))
    }

    /// As [`Cluster::start_with`], running `init` on each locality before
    /// it joins the others (see [`Runtime::boot_with`]).
    pub fn start_init<F, I>(n: u32, tweak: F, init: I) -> Result<Cluster>
    where
        F: Fn(u32, &mut RuntimeConfig),
        I: Fn(&Runtime) -> Result<()> + Sync,
    {
        if n == 0 {
            return Err(Error::Config("a cluster needs at least one locality".into()));
        }
        let listeners = (0..n)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::Boot(format!("cannot bind loopback listener: {e}")))?;
        let addrs = listeners
            .iter()
            .map(|l| l.local_addr().map(|a| a.to_string()))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::Boot(e.to_string()))?;
        let configs: Vec<RuntimeConfig> = (0..n)
            .map(|i| {
                let mut cfg = RuntimeConfig {
                    localities: addrs.clone(),
                    this_locality: i,
                    ..RuntimeConfig::default()
                };
                tweak(i, &mut cfg);
                cfg.localities = addrs.clone();
                cfg.this_locality = i;
                cfg
            })
            .collect();
        let booted: Vec<Result<Runtime>> = std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .into_iter()
                .zip(listeners)
                .map(|(cfg, l)| {
                    let init = &init;
                    s.spawn(move || Runtime::boot_with(cfg, Some(l), init))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Boot("boot thread panicked".into()))))
                .collect()
        });
        let mut localities = Vec::with_capacity(n as usize);
        let mut first_err = None;
        for r in booted {
            match r {
                Ok(rt) => localities.push(rt),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            for rt in &localities {
                rt.kill();
            }
            return Err(e);
        }
        Ok(Cluster { localities })
    }

    pub fn locality(&self, i: u32) -> &Runtime {
        &self.localities[i as usize]
    }

    pub fn localities(&self) -> &[Runtime] {
        &self.localities
    }

    pub fn len(&self) -> usize {
        self.localities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.localities.is_empty()
    }

    /// Waits at a final barrier, then stops every locality, locality 0 last.
    pub fn shutdown(self) {
        let live: Vec<_> = self.localities.iter().filter(|r| r.is_running()).collect();
        if live.len() == self.localities.len() {
            let arrivals: Vec<_> = live.iter().map(|r| r.barrier()).collect();
            for a in arrivals {
                if let Err(e) = a.get() {
                    log::warn!("final barrier: {e}");
                    break;
                }
            }
        }
        for rt in &self.localities {
            rt.inner.transport.expect_departures();
        }
        for rt in self.localities.iter().rev() {
            rt.shutdown();
        }
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        for rt in &self.localities {
            rt.inner.transport.expect_departures();
        }
        for rt in self.localities.iter().rev() {
            rt.shutdown();
        }
    }
}
