use std::collections::{HashMap, VecDeque};
use std::net::{SocketAddr, UdpSocket};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TrySendError};

use super::{
    at_least_1ms, check_limit, resolve_v4, Acceptor, EndpointInfo, FrameTransport, Mode,
    TransportError, DEFAULT_RECV_LIMIT,
};
use crate::arq::{self, Segment, SegmentKind};
use crate::wire::{decode_frame, Frame, HandshakeParams};

/// Largest frame payload carried in one UDP datagram; frames are never
/// fragmented across datagrams.
pub const DATAGRAM_MAX_PAYLOAD: u32 = 1400;

const SESSION_QUEUE: usize = 1024;
const RECV_BUF: usize = 64 * 1024;
const OUTBOX_LIMIT: usize = 1024;
const DROP_FLUSH: Duration = Duration::from_millis(200);

/// Unreliable, message-oriented byte transport.
pub trait DatagramLink: Send {
    fn send_datagram(&mut self, bytes: &[u8]) -> Result<(), TransportError>;
    fn recv_datagram(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError>;
    fn local_addr(&self) -> SocketAddr;
    fn remote_addr(&self) -> Option<SocketAddr>;
    fn mode(&self) -> Mode;

    /// Per-datagram frame payload cap, if the medium has one.
    fn frame_payload_limit(&self) -> Option<u32> {
        None
    }
}

/// Client-side UDP socket connected to one server address.
pub struct UdpLink {
    socket: UdpSocket,
    local: SocketAddr,
    remote: SocketAddr,
    buf: Vec<u8>,
}

impl UdpLink {
    pub fn connect(addr: &str) -> Result<UdpLink, TransportError> {
        let remote = resolve_v4(addr)?;
        let socket = UdpSocket::bind("0.0.0.0:0")?;
        socket.connect(remote)?;
        Ok(UdpLink {
            local: socket.local_addr()?,
            socket,
            remote,
            buf: vec![0; RECV_BUF],
        })
    }
}

impl DatagramLink for UdpLink {
    fn send_datagram(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.socket.send(bytes).map_err(TransportError::from_io)?;
        Ok(())
    }

    fn recv_datagram(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.socket.set_read_timeout(Some(at_least_1ms(timeout)))?;
        let n = self.socket.recv(&mut self.buf).map_err(TransportError::from_io)?;
        Ok(self.buf[..n].to_vec())
    }

    fn local_addr(&self) -> SocketAddr {
        self.local
    }

    fn remote_addr(&self) -> Option<SocketAddr> {
        Some(self.remote)
    }

    fn mode(&self) -> Mode {
        Mode::Datagram
    }

    fn frame_payload_limit(&self) -> Option<u32> {
        Some(DATAGRAM_MAX_PAYLOAD)
    }
}

type SessionMap = Arc<Mutex<HashMap<SocketAddr, Sender<Vec<u8>>>>>;

/// Server-side view of one UDP peer, fed by a [`UdpAcceptor`].
pub struct UdpSessionLink {
    socket: Arc<UdpSocket>,
    rx: Receiver<Vec<u8>>,
    peer: SocketAddr,
    local: SocketAddr,
    sessions: SessionMap,
}

impl DatagramLink for UdpSessionLink {
    fn send_datagram(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        self.socket
            .send_to(bytes, self.peer)
            .map_err(TransportError::from_io)?;
        Ok(())
    }

    fn recv_datagram(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(d) => Ok(d),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::TimedOut),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }

    fn local_addr(&self) -> SocketAddr {
        self.local
    }

    fn remote_addr(&self) -> Option<SocketAddr> {
        Some(self.peer)
    }

    fn mode(&self) -> Mode {
        Mode::Datagram
    }

    fn frame_payload_limit(&self) -> Option<u32> {
        Some(DATAGRAM_MAX_PAYLOAD)
    }
}

impl Drop for UdpSessionLink {
    fn drop(&mut self) {
        self.sessions.lock().unwrap().remove(&self.peer);
    }
}

/// Demultiplexes one UDP socket into per-peer sessions. A datagram from an
/// unknown source address creates a new session.
pub struct UdpAcceptor {
    socket: Arc<UdpSocket>,
    sessions: SessionMap,
    local: SocketAddr,
    arq: Option<(u16, u64)>,
    buf: Vec<u8>,
}

impl UdpAcceptor {
    /// `arq = Some((window, timeout_ticks))` runs Go-Back-N under every
    /// session; `None` carries one raw frame per datagram.
    pub fn bind(addr: &str, arq: Option<(u16, u64)>) -> Result<UdpAcceptor, TransportError> {
        let sock = resolve_v4(addr)?;
        let socket = UdpSocket::bind(sock).map_err(|e| TransportError::from_bind(e, sock))?;
        Ok(UdpAcceptor {
            local: socket.local_addr()?,
            socket: Arc::new(socket),
            sessions: Arc::default(),
            arq,
            buf: vec![0; RECV_BUF],
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn open_session(&self, peer: SocketAddr, first: Vec<u8>) -> UdpSessionLink {
        let (tx, rx) = crossbeam_channel::bounded(SESSION_QUEUE);
        tx.send(first).expect("fresh channel has room");
        self.sessions.lock().unwrap().insert(peer, tx);
        UdpSessionLink {
            socket: self.socket.clone(),
            rx,
            peer,
            local: self.local,
            sessions: self.sessions.clone(),
        }
    }
}

impl Acceptor for UdpAcceptor {
    type Conn = Box<dyn FrameTransport>;

    fn accept_timeout(&mut self, timeout: Duration) -> Result<Option<Self::Conn>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.socket.set_read_timeout(Some(at_least_1ms(left)))?;
            let (n, peer) = match self.socket.recv_from(&mut self.buf) {
                Ok(r) => r,
                Err(e) => match TransportError::from_io(e) {
                    TransportError::TimedOut => return Ok(None),
                    // ICMP port-unreachable from an earlier send; not fatal.
                    TransportError::Closed => continue,
                    other => return Err(other),
                },
            };
            let datagram = self.buf[..n].to_vec();
            let existing = self.sessions.lock().unwrap().get(&peer).cloned();
            let datagram = match existing {
                Some(tx) => match tx.try_send(datagram) {
                    Ok(()) | Err(TrySendError::Full(_)) => continue,
                    Err(TrySendError::Disconnected(d)) => d,
                },
                None => datagram,
            };
            let link = self.open_session(peer, datagram);
            let conn: Box<dyn FrameTransport> = match self.arq {
                Some((window, timeout)) => Box::new(ArqEndpoint::new(link, window, timeout)),
                None => Box::new(DatagramEndpoint::new(link)),
            };
            return Ok(Some(conn));
        }
    }

    fn local_addr(&self) -> SocketAddr {
        self.local
    }
}

/// One frame per datagram, no reliability.
pub struct DatagramEndpoint<L> {
    link: L,
    recv_limit: u32,
}

impl<L: DatagramLink> DatagramEndpoint<L> {
    pub fn new(link: L) -> DatagramEndpoint<L> {
        let recv_limit = link.frame_payload_limit().unwrap_or(DEFAULT_RECV_LIMIT);
        DatagramEndpoint { link, recv_limit }
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }
}

impl DatagramEndpoint<UdpLink> {
    pub fn connect(addr: &str) -> Result<Self, TransportError> {
        UdpLink::connect(addr).map(DatagramEndpoint::new)
    }
}

impl<L: DatagramLink> FrameTransport for DatagramEndpoint<L> {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        check_limit(frame, self.link.frame_payload_limit().unwrap_or(u32::MAX))?;
        self.link.send_datagram(&frame.encode())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Frame, TransportError> {
        let bytes = self.link.recv_datagram(timeout)?;
        let decoded = decode_frame(&bytes)?;
        if decoded.unconsumed > 0 {
            return Err(TransportError::TrailingBytes(decoded.unconsumed));
        }
        check_limit(&decoded.frame, self.recv_limit)?;
        Ok(decoded.frame)
    }

    fn info(&self) -> EndpointInfo {
        EndpointInfo {
            local_addr: self.link.local_addr(),
            remote_addr: self.link.remote_addr(),
            mode: self.link.mode(),
            arq: false,
        }
    }

    fn payload_limit(&self) -> Option<u32> {
        self.link.frame_payload_limit()
    }

    fn apply_params(&mut self, params: &HandshakeParams) {
        self.recv_limit = params.max_payload;
    }
}

/// Frames carried as Go-Back-N segment payloads over a datagram link, in both
/// directions. One logical tick is one millisecond of wall time.
///
/// The state machines only advance while the owner calls `send_frame`,
/// `recv_frame` or `flush`.
pub struct ArqEndpoint<L: DatagramLink> {
    link: L,
    sender: arq::Sender,
    receiver: arq::Receiver,
    epoch: Instant,
    outbox: VecDeque<Vec<u8>>,
    inbox: VecDeque<Result<Frame, TransportError>>,
    recv_limit: u32,
    dead: bool,
}

impl<L: DatagramLink> ArqEndpoint<L> {
    pub fn new(link: L, window: u16, timeout_ticks: u64) -> ArqEndpoint<L> {
        let recv_limit = link.frame_payload_limit().unwrap_or(DEFAULT_RECV_LIMIT);
        ArqEndpoint {
            link,
            sender: arq::Sender::new(window, timeout_ticks),
            receiver: arq::Receiver::new(),
            epoch: Instant::now(),
            outbox: VecDeque::new(),
            inbox: VecDeque::new(),
            recv_limit,
            dead: false,
        }
    }

    pub fn sender(&self) -> &arq::Sender {
        &self.sender
    }

    fn now(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn drive_sender(&mut self) -> Result<(), TransportError> {
        let now = self.now();
        for seg in self.sender.on_tick(now) {
            self.link.send_datagram(&seg.encode())?;
        }
        while self.sender.can_send() {
            let Some(bytes) = self.outbox.pop_front() else { break };
            let seg = self
                .sender
                .send(bytes, now)
                .expect("window checked; frame size bounded by segment limit");
            self.link.send_datagram(&seg.encode())?;
        }
        Ok(())
    }

    fn on_datagram(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        let Ok(seg) = Segment::decode(bytes) else {
            return Ok(());
        };
        match seg.kind {
            SegmentKind::Data => {
                let receipt = self.receiver.on_segment(&seg);
                self.link.send_datagram(&receipt.ack.encode())?;
                if let Some(payload) = receipt.delivered {
                    let frame = decode_frame(&payload)
                        .map_err(TransportError::from)
                        .and_then(|d| {
                            check_limit(&d.frame, self.recv_limit)?;
                            Ok(d.frame)
                        });
                    self.inbox.push_back(frame);
                }
            }
            SegmentKind::Ack if seg.is_intact() => {
                let now = self.now();
                self.sender.on_ack(seg.seq, now);
            }
            SegmentKind::Ack => {}
        }
        Ok(())
    }

    /// Runs timers and handles at most one incoming datagram, waiting up to
    /// `wait` for it (less if a retransmission falls due sooner).
    fn pump(&mut self, wait: Duration) -> Result<(), TransportError> {
        if self.dead {
            return Err(TransportError::Closed);
        }
        self.drive_sender()?;
        let now = self.now();
        let wait = match self.sender.timer_expiry() {
            Some(exp) => wait.min(Duration::from_millis(exp.saturating_sub(now))),
            None => wait,
        };
        match self.link.recv_datagram(at_least_1ms(wait)) {
            Ok(bytes) => self.on_datagram(&bytes)?,
            Err(TransportError::TimedOut) => {}
            Err(e) => {
                if e.is_disconnect() {
                    self.dead = true;
                }
                return Err(e);
            }
        }
        self.drive_sender()
    }

    fn drain(&mut self, timeout: Duration) -> Result<(), TransportError> {
        let deadline = Instant::now() + timeout;
        while !(self.outbox.is_empty() && self.sender.is_idle()) {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::TimedOut);
            }
            self.pump(left)?;
        }
        Ok(())
    }
}

impl ArqEndpoint<UdpLink> {
    pub fn connect(addr: &str, window: u16, timeout_ticks: u64) -> Result<Self, TransportError> {
        UdpLink::connect(addr).map(|l| ArqEndpoint::new(l, window, timeout_ticks))
    }
}

impl<L: DatagramLink> FrameTransport for ArqEndpoint<L> {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        let limit = self
            .link
            .frame_payload_limit()
            .unwrap_or(u32::MAX)
            .min((arq::MAX_SEGMENT_PAYLOAD - crate::wire::HEADER_LEN) as u32);
        check_limit(frame, limit)?;
        self.outbox.push_back(frame.encode());
        self.drive_sender()?;
        let deadline = Instant::now() + Duration::from_secs(5);
        while self.outbox.len() > OUTBOX_LIMIT {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::TimedOut);
            }
            self.pump(left)?;
        }
        Ok(())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Frame, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(frame) = self.inbox.pop_front() {
                return frame;
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                // one last non-waiting pass so timers still run on zero timeouts
                self.drive_sender()?;
                return Err(TransportError::TimedOut);
            }
            self.pump(left)?;
        }
    }

    fn info(&self) -> EndpointInfo {
        EndpointInfo {
            local_addr: self.link.local_addr(),
            remote_addr: self.link.remote_addr(),
            mode: self.link.mode(),
            arq: true,
        }
    }

    fn payload_limit(&self) -> Option<u32> {
        self.link.frame_payload_limit()
    }

    fn apply_params(&mut self, params: &HandshakeParams) {
        self.sender.set_window(params.window);
        self.recv_limit = params.max_payload;
    }

    /// Pumps until every queued frame has been acknowledged.
    fn flush(&mut self, timeout: Duration) -> Result<(), TransportError> {
        self.drain(timeout)
    }
}

impl<L: DatagramLink> Drop for ArqEndpoint<L> {
    fn drop(&mut self) {
        let _ = self.drain(DROP_FLUSH);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use crate::transport::mem_pair;
    use crate::wire::Kind;
    use std::thread;

    const T: Duration = Duration::from_secs(5);

    #[test]
    fn udp_raw_round_trip() {
        let mut acceptor = UdpAcceptor::bind("127.0.0.1:0", None).unwrap();
        let addr = acceptor.local_addr().to_string();
        let mut client = DatagramEndpoint::connect(&addr).unwrap();
        let f = Frame::new(Kind::Echo, &b"ping"[..]);
        client.send_frame(&f).unwrap();
        let mut server = acceptor.accept_timeout(T).unwrap().unwrap();
        assert_eq!(server.recv_frame(T).unwrap(), f);
        assert_eq!(server.info().remote_addr, Some(client.info().local_addr));
        server.send_frame(&Frame::new(Kind::EchoReply, &b"ping"[..])).unwrap();
        assert_eq!(client.recv_frame(T).unwrap().kind, Kind::EchoReply);
        assert_eq!(acceptor.session_count(), 1);
        drop(server);
        assert_eq!(acceptor.session_count(), 0);
    }

    #[test]
    fn udp_rejects_oversize_frames() {
        let acceptor = UdpAcceptor::bind("127.0.0.1:0", None).unwrap();
        let mut client = DatagramEndpoint::connect(&acceptor.local_addr().to_string()).unwrap();
        let big = Frame::new(Kind::Echo, vec![0; DATAGRAM_MAX_PAYLOAD as usize + 1]);
        assert!(matches!(
            client.send_frame(&big),
            Err(TransportError::FrameTooLarge { len: 1401, limit: 1400 })
        ));
        assert_eq!(client.payload_limit(), Some(DATAGRAM_MAX_PAYLOAD));
    }

    #[test]
    fn trailing_bytes_in_datagram_rejected() {
        let (mut a, b) = mem_pair(ChannelConfig::perfect(1)).unwrap();
        let mut ep = DatagramEndpoint::new(b);
        let mut bytes = Frame::empty(Kind::Bye).encode();
        bytes.push(0);
        a.send_datagram(&bytes).unwrap();
        assert!(matches!(ep.recv_frame(T), Err(TransportError::TrailingBytes(1))));
    }

    fn arq_exchange(config: ChannelConfig, frames: usize) {
        let (a, b) = mem_pair(config).unwrap();
        let sent: Vec<Frame> = (0..frames)
            .map(|i| Frame::new(Kind::Echo, format!("frame-{i}").into_bytes()))
            .collect();
        let expected = sent.clone();
        let receiver = thread::spawn(move || {
            let mut ep = ArqEndpoint::new(b, 8, 5);
            let got: Vec<Frame> = (0..frames).map(|_| ep.recv_frame(T).unwrap()).collect();
            // keep acking until the peer is done
            let _ = ep.recv_frame(Duration::from_millis(300));
            got
        });
        let mut ep = ArqEndpoint::new(a, 8, 5);
        for f in &sent {
            ep.send_frame(f).unwrap();
        }
        ep.flush(T).unwrap();
        assert_eq!(receiver.join().unwrap(), expected);
    }

    #[test]
    fn arq_over_perfect_link() {
        arq_exchange(ChannelConfig::perfect(4), 100);
    }

    #[test]
    fn arq_over_lossy_link_delivers_in_order() {
        let cfg = ChannelConfig {
            loss_prob: 0.2,
            dup_prob: 0.05,
            corrupt_prob: 0.05,
            max_delay: 3,
            seed: 99,
        };
        arq_exchange(cfg, 100);
    }

    #[test]
    fn arq_over_udp_loopback() {
        let mut acceptor = UdpAcceptor::bind("127.0.0.1:0", Some((8, 20))).unwrap();
        let addr = acceptor.local_addr().to_string();
        let client = thread::spawn(move || {
            let mut ep = ArqEndpoint::connect(&addr, 8, 20).unwrap();
            for i in 0..50u32 {
                ep.send_frame(&Frame::new(Kind::Echo, i.to_be_bytes().to_vec())).unwrap();
            }
            (0..50)
                .map(|_| ep.recv_frame(T).unwrap().payload)
                .collect::<Vec<_>>()
        });
        let mut server = acceptor.accept_timeout(T).unwrap().unwrap();
        assert!(server.info().arq);
        let pump = thread::spawn(move || {
            // keep demultiplexing while the session is live
            while acceptor.accept_timeout(Duration::from_millis(20)).unwrap().is_none() {
                if acceptor.session_count() == 0 {
                    break;
                }
            }
        });
        for _ in 0..50 {
            let f = server.recv_frame(T).unwrap();
            server.send_frame(&Frame::new(Kind::EchoReply, f.payload)).unwrap();
        }
        server.flush(T).unwrap();
        let replies = client.join().unwrap();
        drop(server);
        pump.join().unwrap();
        let expected: Vec<Vec<u8>> = (0..50u32).map(|i| i.to_be_bytes().to_vec()).collect();
        assert_eq!(replies, expected);
    }
}
