//! In-process datagram links whose every datagram passes through a
//! simulated [`Channel`].
//!
//! Each direction owns its own channel and logical clock. The receiving side
//! drives the clock: while something is scheduled for a later tick, each
//! receive poll advances the clock by one tick.

use std::collections::VecDeque;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};
use std::sync::atomic::{AtomicU16, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};

use super::{Acceptor, DatagramEndpoint, DatagramLink, FrameTransport, Mode, TransportError};
use crate::arq::ack_path_seed;
use crate::channel::{Channel, ChannelConfig, ChannelError};

const TICK_WAIT: Duration = Duration::from_micros(200);

struct Pipe {
    channel: Channel,
    tick: u64,
    ready: VecDeque<Vec<u8>>,
    closed: bool,
}

struct Shared {
    pipe: Mutex<Pipe>,
    signal: Condvar,
}

impl Shared {
    fn new(config: ChannelConfig) -> Result<Arc<Shared>, ChannelError> {
        Ok(Arc::new(Shared {
            pipe: Mutex::new(Pipe {
                channel: Channel::new(config)?,
                tick: 0,
                ready: VecDeque::new(),
                closed: false,
            }),
            signal: Condvar::new(),
        }))
    }

    fn close(&self) {
        self.pipe.lock().unwrap().closed = true;
        self.signal.notify_all();
    }
}

/// One end of a simulated datagram link.
pub struct MemLink {
    tx: Arc<Shared>,
    rx: Arc<Shared>,
    local: SocketAddr,
    remote: SocketAddr,
}

fn fake_addr(port: u16) -> SocketAddr {
    SocketAddr::V4(SocketAddrV4::new(Ipv4Addr::LOCALHOST, port))
}

/// Two connected links. `a → b` uses `config`; `b → a` uses the same
/// profile with a derived seed.
pub fn mem_pair(config: ChannelConfig) -> Result<(MemLink, MemLink), ChannelError> {
    static NEXT_PORT: AtomicU16 = AtomicU16::new(20_000);
    let a_to_b = Shared::new(config)?;
    let b_to_a = Shared::new(config.with_seed(ack_path_seed(config.seed)))?;
    let pa = NEXT_PORT.fetch_add(1, Ordering::Relaxed);
    let pb = NEXT_PORT.fetch_add(1, Ordering::Relaxed);
    let a = MemLink {
        tx: a_to_b.clone(),
        rx: b_to_a.clone(),
        local: fake_addr(pa),
        remote: fake_addr(pb),
    };
    let b = MemLink {
        tx: b_to_a,
        rx: a_to_b,
        local: fake_addr(pb),
        remote: fake_addr(pa),
    };
    Ok((a, b))
}

impl DatagramLink for MemLink {
    fn send_datagram(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        let mut pipe = self.tx.pipe.lock().unwrap();
        if pipe.closed {
            return Err(TransportError::Closed);
        }
        let now = pipe.tick;
        pipe.channel.push(bytes, now);
        drop(pipe);
        self.tx.signal.notify_all();
        Ok(())
    }

    fn recv_datagram(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut pipe = self.rx.pipe.lock().unwrap();
        loop {
            let now = pipe.tick;
            let due = pipe.channel.pop_ready(now);
            pipe.ready.extend(due);
            if let Some(d) = pipe.ready.pop_front() {
                return Ok(d);
            }
            if pipe.closed && pipe.channel.is_empty() {
                return Err(TransportError::Closed);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::TimedOut);
            }
            if pipe.channel.is_empty() {
                pipe = self.rx.signal.wait_timeout(pipe, left).unwrap().0;
            } else {
                pipe.tick += 1;
                pipe = self.rx.signal.wait_timeout(pipe, TICK_WAIT.min(left)).unwrap().0;
            }
        }
    }

    fn local_addr(&self) -> SocketAddr {
        self.local
    }

    fn remote_addr(&self) -> Option<SocketAddr> {
        Some(self.remote)
    }

    fn mode(&self) -> Mode {
        Mode::InMemory
    }
}

impl Drop for MemLink {
    fn drop(&mut self) {
        self.tx.close();
        self.rx.close();
    }
}

/// Server side of an in-memory "network": yields the far end of every link
/// created through its [`MemConnector`]s.
pub struct MemListener {
    incoming: Receiver<MemLink>,
    connector: MemConnector,
}

/// Cloneable client-side handle for connecting to a [`MemListener`].
#[derive(Clone)]
pub struct MemConnector {
    tx: Sender<MemLink>,
    config: ChannelConfig,
    seeds: Arc<AtomicU64>,
    addr: SocketAddr,
}

impl MemListener {
    pub fn new(config: ChannelConfig) -> Result<MemListener, ChannelError> {
        config.validate()?;
        let (tx, incoming) = crossbeam_channel::unbounded();
        Ok(MemListener {
            incoming,
            connector: MemConnector {
                tx,
                config,
                seeds: Arc::new(AtomicU64::new(config.seed)),
                addr: fake_addr(7000),
            },
        })
    }

    pub fn connector(&self) -> MemConnector {
        self.connector.clone()
    }
}

impl MemConnector {
    /// Connects a raw-frame endpoint. Each connection draws a fresh seed.
    pub fn connect(&self) -> Result<DatagramEndpoint<MemLink>, TransportError> {
        self.connect_link().map(DatagramEndpoint::new)
    }

    pub fn connect_link(&self) -> Result<MemLink, TransportError> {
        let seed = match self.seeds.fetch_add(1, Ordering::Relaxed) {
            0 => 1,
            s => s,
        };
        let (client, server) =
            mem_pair(self.config.with_seed(seed)).expect("config validated at listener creation");
        self.tx.send(server).map_err(|_| TransportError::Closed)?;
        Ok(client)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Acceptor for MemListener {
    type Conn = Box<dyn FrameTransport>;

    fn accept_timeout(&mut self, timeout: Duration) -> Result<Option<Self::Conn>, TransportError> {
        match self.incoming.recv_timeout(timeout) {
            Ok(link) => Ok(Some(Box::new(DatagramEndpoint::new(link)))),
            Err(crossbeam_channel::RecvTimeoutError::Timeout) => Ok(None),
            Err(crossbeam_channel::RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }

    fn local_addr(&self) -> SocketAddr {
        self.connector.addr
    }
}
