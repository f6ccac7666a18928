use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;

use super::future::{promise, Future, Promise};
use crate::error::{Error, Result};

struct State<T: Send + Sync + 'static> {
    values: VecDeque<T>,
    waiters: VecDeque<Promise<T>>,
    closed: bool,
}

/// Unbounded FIFO channel. Sends never block; `recv` returns a future that
/// the next unmatched send completes. Cloning yields another handle to the
/// same channel.
pub struct Channel<T: Send + Sync + 'static> {
    state: Arc<Mutex<State<T>>>,
}

impl<T: Send + Sync + 'static> Clone for Channel<T> {
    fn clone(&self) -> Self {
        Channel { state: self.state.clone() }
    }
}

impl<T: Send + Sync + 'static> fmt::Debug for Channel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.state.lock();
        f.debug_struct("Channel")
            .field("buffered", &s.values.len())
            .field("waiting", &s.waiters.len())
            .field("closed", &s.closed)
            .finish()
    }
}

impl<T: Send + Sync + 'static> Default for Channel<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Send + Sync + 'static> Channel<T> {
    pub fn new() -> Self {
        Channel {
            state: Arc::new(Mutex::new(State {
                values: VecDeque::new(),
                waiters: VecDeque::new(),
                closed: false,
            })),
        }
    }

    /// Hands `v` to the oldest pending receiver, or buffers it.
    pub fn send(&self, v: T) -> Result<()> {
        let waiter = {
            let mut s = self.state.lock();
            if s.closed {
                return Err(Error::ChannelClosed);
            }
            match s.waiters.pop_front() {
                Some(p) => p,
                None => {
                    s.values.push_back(v);
                    return Ok(());
                }
            }
        };
        // completion may run callbacks; keep it outside the lock
        let _ = waiter.set_value(v);
        Ok(())
    }

    pub fn recv(&self) -> Future<T>
    where
        T: Clone,
    {
        let mut s = self.state.lock();
        if let Some(v) = s.values.pop_front() {
            return Future::ready(v);
        }
        if s.closed {
            return Future::failed(Error::ChannelClosed);
        }
        let (p, f) = promise();
        s.waiters.push_back(p);
        f
    }

    /// Closes the channel. Pending receivers fail with
    /// [`Error::ChannelClosed`]; buffered values are dropped.
    pub fn close(&self) {
        let waiters = {
            let mut s = self.state.lock();
            s.closed = true;
            s.values.clear();
            std::mem::take(&mut s.waiters)
        };
        for p in waiters {
            let _ = p.set_error(Error::ChannelClosed);
        }
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().closed
    }

    /// Buffered values not yet received.
    pub fn len(&self) -> usize {
        self.state.lock().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    #[test]
    fn recv_before_send_is_pending() {
        let c = Channel::new();
        let f = c.recv();
        assert!(!f.is_ready());
        c.send(7).unwrap();
        assert_eq!(f.get(), Ok(7));
    }

    #[test]
    fn fifo_pairing_both_directions() {
        let c = Channel::new();
        let r1 = c.recv();
        let r2 = c.recv();
        c.send(1).unwrap();
        c.send(2).unwrap();
        c.send(3).unwrap();
        assert_eq!((r1.get(), r2.get()), (Ok(1), Ok(2)));
        assert_eq!(c.recv().get(), Ok(3));
    }

    #[test]
    fn closed_channel_rejects() {
        let c = Channel::new();
        let pending = c.recv();
        c.close();
        assert_eq!(pending.get(), Err(Error::ChannelClosed));
        assert_eq!(c.send(1), Err(Error::ChannelClosed));
        assert_eq!(c.recv().get(), Err(Error::ChannelClosed));
    }

    #[test]
    fn concurrent_conservation() {
        let c = Channel::new();
        let producers: Vec<_> = (0..4)
            .map(|p| {
                let c = c.clone();
                thread::spawn(move || {
                    for i in 0..1000 {
                        c.send(p * 1000 + i).unwrap();
                    }
                })
            })
            .collect();
        let mut got: Vec<i32> = (0..4000).map(|_| c.recv().get().unwrap()).collect();
        for p in producers {
            p.join().unwrap();
        }
        got.sort();
        assert_eq!(got, (0..4000).collect::<Vec<_>>());
    }

    #[test]
    fn single_producer_order_preserved() {
        let c = Channel::new();
        let recvs: Vec<_> = (0..100).map(|_| c.recv()).collect();
        let tx = c.clone();
        thread::spawn(move || (0..100).for_each(|i| tx.send(i).unwrap()))
            .join()
            .unwrap();
        let got: Vec<i32> = recvs.into_iter().map(|f| f.get().unwrap()).collect();
        assert_eq!(got, (0..100).collect::<Vec<_>>());
    }
}
