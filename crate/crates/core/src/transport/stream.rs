use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::time::{Duration, Instant};

use super::{
    at_least_1ms, check_limit, resolve_v4, Acceptor, EndpointInfo, FrameTransport, Mode,
    TransportError, DEFAULT_RECV_LIMIT,
};
use crate::wire::{decode_frame, decode_header, DecodeError, Frame, HandshakeParams, HEADER_LEN, MAGIC};

const ACCEPT_POLL: Duration = Duration::from_millis(5);
const READ_CHUNK: usize = 16 * 1024;

pub struct StreamListener {
    listener: TcpListener,
    local: SocketAddr,
}

/// Binds a TCP listener on an IPv4 `host:port`.
pub fn listen(addr: &str) -> Result<StreamListener, TransportError> {
    let sock = resolve_v4(addr)?;
    let listener = TcpListener::bind(sock).map_err(|e| TransportError::from_bind(e, sock))?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    Ok(StreamListener { listener, local })
}

impl StreamListener {
    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn accept_timeout(&self, timeout: Duration) -> Result<Option<StreamEndpoint>, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            match self.listener.accept() {
                Ok((stream, _)) => return StreamEndpoint::from_stream(stream).map(Some),
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Ok(None);
                    }
                    std::thread::sleep(ACCEPT_POLL.min(deadline - now));
                }
                Err(e) => return Err(TransportError::Io(e)),
            }
        }
    }
}

impl Acceptor for StreamListener {
    type Conn = StreamEndpoint;

    fn accept_timeout(&mut self, timeout: Duration) -> Result<Option<StreamEndpoint>, TransportError> {
        StreamListener::accept_timeout(self, timeout)
    }

    fn local_addr(&self) -> SocketAddr {
        self.local
    }
}

/// Length-delimited frames over a TCP connection. Partial reads accumulate in
/// an internal buffer until a whole frame is present.
pub struct StreamEndpoint {
    stream: TcpStream,
    buf: Vec<u8>,
    recv_limit: u32,
    local: SocketAddr,
    remote: SocketAddr,
    /// A timed-out write may have left half a frame on the wire.
    poisoned: bool,
}

/// How long a send may block on a peer that stopped reading.
pub const DEFAULT_WRITE_TIMEOUT: Duration = Duration::from_secs(5);

impl StreamEndpoint {
    pub fn connect(addr: &str, timeout: Duration) -> Result<StreamEndpoint, TransportError> {
        let sock = resolve_v4(addr)?;
        let stream = TcpStream::connect_timeout(&sock, at_least_1ms(timeout))
            .map_err(TransportError::from_io)?;
        StreamEndpoint::from_stream(stream)
    }

    pub fn from_stream(stream: TcpStream) -> Result<StreamEndpoint, TransportError> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        stream.set_write_timeout(Some(DEFAULT_WRITE_TIMEOUT))?;
        Ok(StreamEndpoint {
            local: stream.local_addr()?,
            remote: stream.peer_addr()?,
            stream,
            buf: Vec::new(),
            recv_limit: DEFAULT_RECV_LIMIT,
            poisoned: false,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn remote_addr(&self) -> SocketAddr {
        self.remote
    }

    pub fn set_write_timeout(&mut self, timeout: Duration) -> Result<(), TransportError> {
        self.stream.set_write_timeout(Some(at_least_1ms(timeout)))?;
        Ok(())
    }

    /// Writes raw bytes, bypassing framing. After a failed write every later
    /// write reports `Closed`.
    pub fn write_raw(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        if self.poisoned {
            return Err(TransportError::Closed);
        }
        let res = self.stream.write_all(bytes).and_then(|_| self.stream.flush());
        if let Err(e) = res {
            self.poisoned = true;
            self.shutdown();
            return Err(TransportError::from_io(e));
        }
        Ok(())
    }

    pub fn shutdown(&self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }

    fn take_frame(&mut self) -> Result<Option<Frame>, TransportError> {
        if self.buf.len() < HEADER_LEN {
            if self.buf.len() >= 2 && self.buf[..2] != MAGIC {
                let magic = [self.buf[0], self.buf[1]];
                self.buf.clear();
                return Err(DecodeError::BadMagic(magic).into());
            }
            return Ok(None);
        }
        let (_, len, _) = decode_header(&self.buf).inspect_err(|_| self.buf.clear())?;
        if len > self.recv_limit as usize {
            self.buf.clear();
            return Err(TransportError::FrameTooLarge {
                len,
                limit: self.recv_limit,
            });
        }
        let total = HEADER_LEN + len;
        if self.buf.len() < total {
            return Ok(None);
        }
        let decoded = decode_frame(&self.buf[..total]);
        self.buf.drain(..total);
        Ok(Some(decoded?.frame))
    }
}

impl FrameTransport for StreamEndpoint {
    fn send_frame(&mut self, frame: &Frame) -> Result<(), TransportError> {
        check_limit(frame, u32::MAX)?;
        self.write_raw(&frame.encode())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Frame, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut chunk = [0u8; READ_CHUNK];
        loop {
            if let Some(frame) = self.take_frame()? {
                return Ok(frame);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::TimedOut);
            }
            self.stream.set_read_timeout(Some(at_least_1ms(deadline - now)))?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(TransportError::from_io(e)),
            }
        }
    }

    fn info(&self) -> EndpointInfo {
        EndpointInfo {
            local_addr: self.local,
            remote_addr: Some(self.remote),
            mode: Mode::Stream,
            arq: false,
        }
    }

    fn apply_params(&mut self, params: &HandshakeParams) {
        self.recv_limit = params.max_payload;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Kind;
    use std::thread;

    fn pair() -> (StreamEndpoint, StreamEndpoint) {
        let l = listen("127.0.0.1:0").unwrap();
        let addr = l.local_addr().to_string();
        let client = thread::spawn(move || StreamEndpoint::connect(&addr, Duration::from_secs(2)).unwrap());
        let server = l.accept_timeout(Duration::from_secs(2)).unwrap().unwrap();
        (client.join().unwrap(), server)
    }

    #[test]
    fn ephemeral_port_is_assigned() {
        let l = listen("127.0.0.1:0").unwrap();
        assert!(l.local_addr().port() > 0);
    }

    #[test]
    fn second_bind_on_same_port_fails() {
        let l = listen("127.0.0.1:0").unwrap();
        let addr = l.local_addr().to_string();
        assert!(matches!(listen(&addr), Err(TransportError::AddrInUse { .. })));
    }

    #[test]
    fn bad_addresses_rejected() {
        assert!(matches!(listen("not an address"), Err(TransportError::BadAddress { .. })));
        assert!(matches!(listen("[::1]:0"), Err(TransportError::BadAddress { .. })));
    }

    #[test]
    fn accept_times_out_quietly() {
        let l = listen("127.0.0.1:0").unwrap();
        assert!(l.accept_timeout(Duration::from_millis(20)).unwrap().is_none());
    }

    #[test]
    fn accepted_remote_matches_client_local() {
        let (client, server) = pair();
        assert_eq!(server.remote_addr(), client.local_addr());
        assert_eq!(client.info().mode, Mode::Stream);
    }

    #[test]
    fn frame_split_across_tiny_writes() {
        let (mut client, mut server) = pair();
        let frame = Frame::new(Kind::Echo, vec![7u8; 300]);
        let bytes = frame.encode();
        let writer = thread::spawn(move || {
            for b in bytes.chunks(3) {
                client.write_raw(b).unwrap();
                thread::sleep(Duration::from_micros(200));
            }
            client
        });
        assert_eq!(server.recv_frame(Duration::from_secs(5)).unwrap(), frame);
        writer.join().unwrap();
    }

    #[test]
    fn two_frames_in_one_write() {
        let (mut client, mut server) = pair();
        let a = Frame::new(Kind::Echo, &b"a"[..]);
        let b = Frame::empty(Kind::Bye);
        let mut bytes = a.encode();
        bytes.extend(b.encode());
        client.write_raw(&bytes).unwrap();
        assert_eq!(server.recv_frame(Duration::from_secs(1)).unwrap(), a);
        assert_eq!(server.recv_frame(Duration::from_secs(1)).unwrap(), b);
    }

    #[test]
    fn recv_times_out_then_closed() {
        let (client, mut server) = pair();
        assert!(matches!(
            server.recv_frame(Duration::from_millis(20)),
            Err(TransportError::TimedOut)
        ));
        drop(client);
        assert!(matches!(
            server.recv_frame(Duration::from_secs(1)),
            Err(TransportError::Closed)
        ));
    }

    #[test]
    fn corruption_surfaces_as_error() {
        let (mut client, mut server) = pair();
        let mut bytes = Frame::new(Kind::Echo, &b"hello"[..]).encode();
        bytes[HEADER_LEN] ^= 1;
        client.write_raw(&bytes).unwrap();
        assert!(matches!(
            server.recv_frame(Duration::from_secs(1)),
            Err(TransportError::Decode(DecodeError::ChecksumMismatch { .. }))
        ));
        client.write_raw(&[0, 0, 0]).unwrap();
        assert!(matches!(
            server.recv_frame(Duration::from_secs(1)),
            Err(TransportError::Decode(DecodeError::BadMagic(_)))
        ));
    }

    #[test]
    fn oversize_frame_rejected_after_negotiation() {
        let (mut client, mut server) = pair();
        server.apply_params(&HandshakeParams::new(1, 8, 4));
        client.send_frame(&Frame::new(Kind::Echo, vec![0; 5])).unwrap();
        assert!(matches!(
            server.recv_frame(Duration::from_secs(1)),
            Err(TransportError::FrameTooLarge { len: 5, limit: 4 })
        ));
    }
}
