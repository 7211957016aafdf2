//! Endpoints that move [`Frame`]s: TCP streams, UDP datagrams (raw or with
//! Go-Back-N underneath) and an in-memory link backed by the channel
//! simulator.
//!
//! Every receive takes a timeout. There is no blocking-forever API.

mod datagram;
mod memory;
mod stream;

use std::io;
use std::net::{SocketAddr, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::wire::{DecodeError, Frame, HandshakeParams};

pub use datagram::{
    ArqEndpoint, DatagramEndpoint, DatagramLink, UdpAcceptor, UdpLink, UdpSessionLink,
    DATAGRAM_MAX_PAYLOAD,
};
pub use memory::{mem_pair, MemConnector, MemLink, MemListener};
pub use stream::{listen, StreamEndpoint, StreamListener, DEFAULT_WRITE_TIMEOUT};

/// Receive limit applied before a handshake has agreed on one.
pub const DEFAULT_RECV_LIMIT: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Stream,
    Datagram,
    InMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndpointInfo {
    pub local_addr: SocketAddr,
    pub remote_addr: Option<SocketAddr>,
    pub mode: Mode,
    /// Go-Back-N runs underneath the frames.
    pub arq: bool,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    TimedOut,
    #[error("frame payload of {len} bytes exceeds limit {limit}")]
    FrameTooLarge { len: usize, limit: u32 },
    #[error("{0} trailing bytes after frame in datagram")]
    TrailingBytes(usize),
    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),
    #[error("address {addr} already in use")]
    AddrInUse { addr: String },
    #[error("permission denied for {addr}")]
    PermissionDenied { addr: String },
    #[error("bad address {addr}: {reason}")]
    BadAddress { addr: String, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl TransportError {
    /// `Closed`, or an I/O error meaning the peer went away.
    pub fn is_disconnect(&self) -> bool {
        match self {
            TransportError::Closed => true,
            TransportError::Io(e) => matches!(
                e.kind(),
                io::ErrorKind::ConnectionReset
                    | io::ErrorKind::ConnectionAborted
                    | io::ErrorKind::BrokenPipe
                    | io::ErrorKind::UnexpectedEof
                    | io::ErrorKind::ConnectionRefused
            ),
            _ => false,
        }
    }

    pub(crate) fn from_io(e: io::Error) -> TransportError {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::TimedOut,
            io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted
            | io::ErrorKind::BrokenPipe
            | io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionRefused => TransportError::Closed,
            _ => TransportError::Io(e),
        }
    }

    pub(crate) fn from_bind(e: io::Error, addr: SocketAddr) -> TransportError {
        match e.kind() {
            io::ErrorKind::AddrInUse => TransportError::AddrInUse {
                addr: addr.to_string(),
            },
            io::ErrorKind::PermissionDenied => TransportError::PermissionDenied {
                addr: addr.to_string(),
            },
            _ => TransportError::Io(e),
        }
    }
}

/// Resolves an IPv4 `host:port` string.
pub fn resolve_v4(addr: &str) -> Result<SocketAddr, TransportError> {
    let bad = |reason: String| TransportError::BadAddress {
        addr: addr.to_string(),
        reason,
    };
    let mut addrs = addr.to_socket_addrs().map_err(|e| bad(e.to_string()))?;
    addrs
        .find(SocketAddr::is_ipv4)
        .ok_or_else(|| bad("no IPv4 address".into()))
}

/// Send/receive contract shared by every endpoint kind.
///
/// One endpoint is used by one thread at a time; endpoints are `Send` so they
/// can be handed to a worker.
pub trait FrameTransport: Send {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError>;

    /// Waits at most `timeout` for the next complete frame.
    fn recv_frame(&mut self, timeout: Duration) -> Result<Frame, TransportError>;

    fn info(&self) -> EndpointInfo;

    /// Hard per-frame payload limit of the underlying medium, if any.
    fn payload_limit(&self) -> Option<u32> {
        None
    }

    /// Adopts handshake results (receive limit, ARQ window).
    fn apply_params(&mut self, _params: &HandshakeParams) {}

    /// Blocks until everything sent so far has left this endpoint (for ARQ:
    /// has been acknowledged).
    fn flush(&mut self, _timeout: Duration) -> Result<(), TransportError> {
        Ok(())
    }
}

impl<T: FrameTransport + ?Sized> FrameTransport for Box<T> {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        (**self).send_frame(frame)
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Frame, TransportError> {
        (**self).recv_frame(timeout)
    }

    fn info(&self) -> EndpointInfo {
        (**self).info()
    }

    fn payload_limit(&self) -> Option<u32> {
        (**self).payload_limit()
    }

    fn apply_params(&mut self, params: &HandshakeParams) {
        (**self).apply_params(params)
    }

    fn flush(&mut self, timeout: Duration) -> Result<(), TransportError> {
        (**self).flush(timeout)
    }
}

/// Source of incoming connections for a server.
pub trait Acceptor: Send {
    type Conn: FrameTransport + 'static;

    /// `Ok(None)` when nothing arrived within `timeout`.
    fn accept_timeout(&mut self, timeout: Duration) -> Result<Option<Self::Conn>, TransportError>;

    fn local_addr(&self) -> SocketAddr;
}

pub(crate) fn check_limit(frame: &Frame, limit: u32) -> Result<(), TransportError> {
    if frame.payload.len() > limit as usize {
        return Err(TransportError::FrameTooLarge {
            len: frame.payload.len(),
            limit,
        });
    }
    Ok(())
}

/// Socket timeouts reject zero; round up to one millisecond.
pub(crate) fn at_least_1ms(d: Duration) -> Duration {
    d.max(Duration::from_millis(1))
}
