//! TCP transport: one ordered stream per locality pair.
//!
//! Locality `k` dials every lower id and introduces itself with a HELLO
//! frame; higher ids dial `k`. Each connection gets a writer thread fed by a
//! queue and a reader thread that decodes frames and hands them upward.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle, ThreadId};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use super::action::system;
use super::parcel::{parse_header, Parcel, HEADER_LEN};
use crate::agas::Gid;
use crate::error::{Error, Result};

/// Upward interface of the transport.
pub(crate) trait Events: Send + Sync {
    fn deliver(&self, p: Parcel);
    fn peer_lost(&self, peer: u32);
}

/// Wire traffic counters. Introspection actions are not counted.
pub(crate) struct ParcelStats {
    pub sent: AtomicU64,
    pub received: AtomicU64,
    pub forwarded: AtomicU64,
    pub bytes_sent: AtomicU64,
    pub sent_to: Vec<AtomicU64>,
    pub received_from: Vec<AtomicU64>,
}

impl ParcelStats {
    fn new(n: usize) -> Self {
        ParcelStats {
            sent: AtomicU64::new(0),
            received: AtomicU64::new(0),
            forwarded: AtomicU64::new(0),
            bytes_sent: AtomicU64::new(0),
            sent_to: (0..n).map(|_| AtomicU64::new(0)).collect(),
            received_from: (0..n).map(|_| AtomicU64::new(0)).collect(),
        }
    }
}

struct Conn {
    stream: TcpStream,
    out: Mutex<Option<mpsc::Sender<Vec<u8>>>>,
    alive: AtomicBool,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

#[derive(Default)]
struct Table {
    conns: HashMap<u32, Arc<Conn>>,
    lost: HashSet<u32>,
}

pub(crate) struct Transport {
    me: u32,
    n: u32,
    boot_timeout: Duration,
    seq: AtomicU64,
    table: Mutex<Table>,
    changed: Condvar,
    stopping: AtomicBool,
    // peers are expected to leave; losses are logged quietly
    parting: AtomicBool,
    events: Mutex<Option<Weak<dyn Events>>>,
    listener: Mutex<Option<JoinHandle<()>>>,
    pub(crate) stats: ParcelStats,
}

fn hello(me: u32, peer: u32) -> Vec<u8> {
    Parcel {
        dest: Gid::locality_service(peer),
        action_id: system::HELLO,
        continuation: Gid::NULL,
        source_locality: me,
        seq_no: 0,
        forwarded: false,
        payload: Vec::new(),
    }
    .encode()
}

fn read_frame(r: &mut impl Read) -> io::Result<Parcel> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let h = parse_header(&header).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let mut p = h.parcel;
    p.payload = vec![0u8; h.payload_len];
    r.read_exact(&mut p.payload)?;
    Ok(p)
}

impl Transport {
    pub(crate) fn new(me: u32, n: u32, boot_timeout: Duration) -> Arc<Transport> {
        Arc::new(Transport {
            me,
            n,
            boot_timeout,
            seq: AtomicU64::new(0),
            table: Mutex::new(Table::default()),
            changed: Condvar::new(),
            stopping: AtomicBool::new(false),
            parting: AtomicBool::new(false),
            events: Mutex::new(None),
            listener: Mutex::new(None),
            stats: ParcelStats::new(n as usize),
        })
    }

    pub(crate) fn next_seq(&self) -> u64 {
        self.seq.fetch_add(1, Ordering::Relaxed) + 1
    }

    /// Accepts higher ids on `listener`, dials lower ids in `addrs`, and
    /// returns once a connection to every peer exists.
    pub(crate) fn start(
        self: &Arc<Self>,
        listener: TcpListener,
        addrs: &[String],
        events: Weak<dyn Events>,
    ) -> Result<()> {
        *self.events.lock() = Some(events);
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::Boot(format!("listener: {e}")))?;
        let me = self.clone();
        let handle = thread::Builder::new()
            .name(format!("amt-L{}-accept", self.me))
            .spawn(move || me.accept_loop(listener))
            .map_err(|e| Error::Boot(e.to_string()))?;
        *self.listener.lock() = Some(handle);

        let deadline = Instant::now() + self.boot_timeout;
        for peer in 0..self.me {
            let stream = self.dial(peer, &addrs[peer as usize], deadline)?;
            self.add_conn(peer, stream)?;
        }
        self.wait_all(deadline)
    }

    fn dial(&self, peer: u32, addr: &str, deadline: Instant) -> Result<TcpStream> {
        let unreachable = |e: &dyn std::fmt::Display| {
            Error::Boot(format!("locality {peer} at {addr} unreachable: {e}"))
        };
        loop {
            let attempt = addr
                .to_socket_addrs()
                .and_then(|mut a| a.next().ok_or_else(|| io::Error::other("no address")))
                .and_then(|a| TcpStream::connect_timeout(&a, Duration::from_millis(500)));
            match attempt {
                Ok(mut s) => {
                    s.write_all(&hello(self.me, peer)).map_err(|e| unreachable(&e))?;
                    return Ok(s);
                }
                Err(e) if Instant::now() >= deadline => return Err(unreachable(&e)),
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        }
    }

    fn wait_all(&self, deadline: Instant) -> Result<()> {
        let mut t = self.table.lock();
        loop {
            if t.conns.len() as u32 == self.n - 1 {
                return Ok(());
            }
            if self.changed.wait_until(&mut t, deadline).timed_out() {
                let missing: Vec<u32> = (0..self.n)
                    .filter(|p| *p != self.me && !t.conns.contains_key(p))
                    .collect();
                return Err(Error::Boot(format!(
                    "locality {}: no connection from {missing:?} within {:?}",
                    self.me, self.boot_timeout
                )));
            }
        }
    }

    fn accept_loop(self: Arc<Self>, listener: TcpListener) {
        while !self.stopping.load(Ordering::Acquire) {
            match listener.accept() {
                Ok((s, from)) => {
                    if let Err(e) = self.admit(s) {
                        log::error!("locality {}: rejected connection from {from}: {e}", self.me);
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5))
                }
                Err(e) => {
                    log::warn!("locality {}: accept failed: {e}", self.me);
                    thread::sleep(Duration::from_millis(5));
                }
            }
        }
    }

    fn admit(self: &Arc<Self>, mut s: TcpStream) -> Result<()> {
        let io = |e: io::Error| Error::Transport(e.to_string());
        s.set_nonblocking(false).map_err(io)?;
        s.set_read_timeout(Some(self.boot_timeout)).map_err(io)?;
        let p = read_frame(&mut s).map_err(io)?;
        s.set_read_timeout(None).map_err(io)?;
        if p.action_id != system::HELLO {
            return Err(Error::Transport("first frame is not HELLO".into()));
        }
        let peer = p.source_locality;
        if peer <= self.me || peer >= self.n {
            return Err(Error::Boot(format!(
                "locality {} got HELLO from unexpected id {peer}",
                self.me
            )));
        }
        self.add_conn(peer, s)
    }

    fn add_conn(self: &Arc<Self>, peer: u32, stream: TcpStream) -> Result<()> {
        let io = |e: io::Error| Error::Transport(e.to_string());
        stream.set_nodelay(true).map_err(io)?;
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let conn = Arc::new(Conn {
            stream: stream.try_clone().map_err(io)?,
            out: Mutex::new(Some(tx)),
            alive: AtomicBool::new(true),
            threads: Mutex::new(Vec::new()),
        });
        {
            let mut t = self.table.lock();
            if t.conns.contains_key(&peer) {
                return Err(Error::Boot(format!(
                    "locality {}: duplicate connection for id {peer}",
                    self.me
                )));
            }
            t.conns.insert(peer, conn.clone());
        }

        let w_stream = stream.try_clone().map_err(io)?;
        let me = self.clone();
        let writer = thread::Builder::new()
            .name(format!("amt-L{}-to{peer}", self.me))
            .spawn(move || {
                if let Err(e) = write_loop(w_stream, rx) {
                    me.lost(peer, &e.to_string());
                }
            })
            .map_err(io)?;
        let me = self.clone();
        let reader = thread::Builder::new()
            .name(format!("amt-L{}-from{peer}", self.me))
            .spawn(move || me.read_loop(peer, stream))
            .map_err(io)?;
        conn.threads.lock().extend([writer, reader]);
        self.changed.notify_all();
        Ok(())
    }

    fn read_loop(self: Arc<Self>, peer: u32, stream: TcpStream) {
        let mut r = BufReader::with_capacity(64 * 1024, stream);
        loop {
            match read_frame(&mut r) {
                Ok(p) => {
                    if !system::is_introspection(p.action_id) {
                        self.stats.received.fetch_add(1, Ordering::Relaxed);
                        self.stats.received_from[peer as usize].fetch_add(1, Ordering::Relaxed);
                    }
                    let events = self.events.lock().as_ref().and_then(Weak::upgrade);
                    match events {
                        Some(ev) => ev.deliver(p),
                        None => break,
                    }
                }
                Err(e) => {
                    let why = if e.kind() == io::ErrorKind::UnexpectedEof {
                        "connection closed".to_string()
                    } else {
                        e.to_string()
                    };
                    self.lost(peer, &why);
                    return;
                }
            }
        }
    }

    fn lost(&self, peer: u32, why: &str) {
        let conn = {
            let mut t = self.table.lock();
            t.lost.insert(peer);
            t.conns.get(&peer).cloned()
        };
        self.changed.notify_all();
        let Some(conn) = conn else { return };
        if !conn.alive.swap(false, Ordering::AcqRel) {
            return;
        }
        conn.out.lock().take();
        let _ = conn.stream.shutdown(Shutdown::Both);
        if self.stopping.load(Ordering::Acquire) {
            return;
        }
        let level = if self.parting.load(Ordering::Acquire) {
            log::Level::Info
        } else {
            log::Level::Warn
        };
        log::log!(level, "locality {}: lost locality {peer}: {why}", self.me);
        let events = self.events.lock().as_ref().and_then(Weak::upgrade);
        if let Some(ev) = events {
            ev.peer_lost(peer);
        }
    }

    fn conn_for(&self, peer: u32) -> Result<Arc<Conn>> {
        let deadline = Instant::now() + self.boot_timeout;
        let mut t = self.table.lock();
        loop {
            if t.lost.contains(&peer) || self.stopping.load(Ordering::Acquire) {
                return Err(Error::Transport(format!("connection to locality {peer} lost")));
            }
            if let Some(c) = t.conns.get(&peer) {
                return Ok(c.clone());
            }
            if self.changed.wait_until(&mut t, deadline).timed_out() {
                return Err(Error::Transport(format!("no connection to locality {peer}")));
            }
        }
    }

    /// Queues `p` for `peer`. A `fresh` parcel is stamped with this
    /// locality's id and the next sequence number; relays keep theirs.
    pub(crate) fn send(&self, peer: u32, mut p: Parcel, fresh: bool) -> Result<()> {
        if peer >= self.n || peer == self.me {
            return Err(Error::InvalidArgument(format!("no remote locality {peer}")));
        }
        let conn = self.conn_for(peer)?;
        let len = {
            let out = conn.out.lock();
            let tx = out
                .as_ref()
                .ok_or_else(|| Error::Transport(format!("connection to locality {peer} lost")))?;
            if fresh {
                p.source_locality = self.me;
                p.seq_no = self.next_seq();
            }
            let frame = p.encode();
            let len = frame.len();
            tx.send(frame)
                .map_err(|_| Error::Transport(format!("connection to locality {peer} lost")))?;
            len
        };
        if !system::is_introspection(p.action_id) {
            let s = &self.stats;
            s.sent.fetch_add(1, Ordering::Relaxed);
            s.sent_to[peer as usize].fetch_add(1, Ordering::Relaxed);
            s.bytes_sent.fetch_add(len as u64, Ordering::Relaxed);
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn is_connected(&self, peer: u32) -> bool {
        self.table
            .lock()
            .conns
            .get(&peer)
            .is_some_and(|c| c.alive.load(Ordering::Acquire))
    }

    fn stop_listener(&self) {
        self.stopping.store(true, Ordering::Release);
        let h = self.listener.lock().take();
        if let Some(h) = h {
            let _ = h.join();
        }
        self.changed.notify_all();
    }

    /// Flushes queued frames and closes every connection.
    pub(crate) fn expect_departures(&self) {
        self.parting.store(true, Ordering::Release);
    }

    pub(crate) fn shutdown(&self) {
        if self.stopping.swap(true, Ordering::AcqRel) {
            return;
        }
        self.stop_listener();
        let conns: Vec<Arc<Conn>> = self.table.lock().conns.values().cloned().collect();
        let current: ThreadId = thread::current().id();
        for c in &conns {
            c.out.lock().take();
        }
        for c in &conns {
            let threads = std::mem::take(&mut *c.threads.lock());
            let (writer, reader) = match <[JoinHandle<()>; 2]>::try_from(threads) {
                Ok([w, r]) => (w, r),
                Err(_) => continue,
            };
            if writer.thread().id() != current {
                let _ = writer.join();
            }
            // give the peer a moment to close its side so nothing unread
            // is left behind, then force it
            let deadline = Instant::now() + Duration::from_secs(1);
            while !reader.is_finished() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(2));
            }
            c.alive.store(false, Ordering::Release);
            let _ = c.stream.shutdown(Shutdown::Both);
            if reader.thread().id() != current {
                let _ = reader.join();
            }
        }
    }

    /// Drops every connection at once without flushing, as if the process
    /// had died.
    pub(crate) fn kill(&self) {
        self.stopping.store(true, Ordering::Release);
        let conns: Vec<Arc<Conn>> = self.table.lock().conns.values().cloned().collect();
        for c in conns {
            c.alive.store(false, Ordering::Release);
            c.out.lock().take();
            let _ = c.stream.shutdown(Shutdown::Both);
        }
        self.stop_listener();
    }
}

fn write_loop(stream: TcpStream, rx: mpsc::Receiver<Vec<u8>>) -> io::Result<()> {
    let mut w = BufWriter::with_capacity(64 * 1024, stream);
    while let Ok(frame) = rx.recv() {
        w.write_all(&frame)?;
        while let Ok(frame) = rx.try_recv() {
            w.write_all(&frame)?;
        }
        w.flush()?;
    }
    w.flush()?;
    let _ = w.get_ref().shutdown(Shutdown::Write);
    Ok(())
}
