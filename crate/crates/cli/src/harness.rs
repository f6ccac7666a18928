//! Multi-process localities on loopback: this process becomes locality 0
//! and each other locality is a child running `amt run`.

use std::net::TcpListener;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use amt_core::{Error, Result, Runtime, RuntimeConfig};

pub struct Harness {
    runtime: Runtime,
    children: Vec<Child>,
    // keeps the config file alive for the children
    _dir: tempfile::TempDir,
}

fn boot_err(e: impl std::fmt::Display) -> Error {
    Error::Boot(e.to_string())
}

impl Harness {
    /// Starts `n` localities sharing `base`'s scheduler settings.
    pub fn spawn(base: &RuntimeConfig, n: u32) -> Result<Harness> {
        let listeners = (0..n)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(boot_err)?;
        let mut cfg = base.clone();
        cfg.localities = listeners
            .iter()
            .map(|l| l.local_addr().map(|a| a.to_string()))
            .collect::<std::io::Result<_>>()
            .map_err(boot_err)?;
        cfg.this_locality = 0;
        let dir = tempfile::tempdir().map_err(boot_err)?;
        let path = dir.path().join("cluster.conf");
        std::fs::write(&path, cfg.to_text()).map_err(boot_err)?;

        let mut listeners = listeners.into_iter();
        let own = listeners.next().expect("n >= 1");
        // the children bind these ports themselves
        drop(listeners);
        let exe = std::env::current_exe().map_err(boot_err)?;
        let mut children = Vec::new();
        for k in 1..n {
            let child = Command::new(&exe)
                .arg("run")
                .arg("--config")
                .arg(&path)
                .arg("--locality")
                .arg(k.to_string())
                .stdin(Stdio::null())
                .spawn();
            match child {
                Ok(c) => children.push(c),
                Err(e) => {
                    reap(&mut children, Duration::ZERO);
                    return Err(boot_err(format!("cannot start locality {k}: {e}")));
                }
            }
        }
        match Runtime::boot_with_listener(cfg, own) {
            Ok(runtime) => Ok(Harness {
                runtime,
                children,
                _dir: dir,
            }),
            Err(e) => {
                reap(&mut children, Duration::ZERO);
                Err(e)
            }
        }
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    /// Asks every child to stop, waits for them, then stops locality 0.
    pub fn shutdown(mut self) -> Result<()> {
        self.runtime.request_cluster_shutdown();
        let clean = reap(&mut self.children, Duration::from_secs(10));
        self.runtime.shutdown();
        if clean {
            Ok(())
        } else {
            Err(Error::Transport("a locality did not exit cleanly".into()))
        }
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        reap(&mut self.children, Duration::ZERO);
    }
}

/// Waits up to `grace` for every child, then kills the rest. Returns
/// whether all exited by themselves with status 0.
fn reap(children: &mut Vec<Child>, grace: Duration) -> bool {
    let deadline = Instant::now() + grace;
    let mut clean = true;
    for mut c in children.drain(..) {
        loop {
            match c.try_wait() {
                Ok(Some(status)) => {
                    clean &= status.success();
                    break;
                }
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(10)),
                _ => {
                    let _ = c.kill();
                    let _ = c.wait();
                    clean = false;
                    break;
                }
            }
        }
    }
    clean
}
