use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::{
    broadcast, mailbox, route_direct, DeliveryHandle, Mailbox, Registry, RegistryError,
    DEFAULT_ENQUEUE_WAIT, DEFAULT_MAX_CLIENTS, DEFAULT_QUEUE_CAPACITY,
};
use crate::transport::{Acceptor, FrameTransport, Mode, TransportError};
use crate::wire::{negotiate, ClientId, ErrorCode, Frame, HandshakeParams, Message, NegotiateError};

const ACCEPT_POLL: Duration = Duration::from_millis(50);
const CLOSE_FLUSH: Duration = Duration::from_millis(500);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub max_clients: usize,
    pub queue_capacity: usize,
    /// How long a sender waits for room in a full mailbox before RecipientBusy.
    pub enqueue_wait: Duration,
    /// Receive timeout of each worker loop; bounds mailbox latency.
    pub poll_interval: Duration,
    pub handshake_timeout: Duration,
    /// Drop clients silent for this long. `None` keeps them forever.
    pub idle_timeout: Option<Duration>,
    /// Upper bounds offered in HELLO_ACK.
    pub supported: HandshakeParams,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            max_clients: DEFAULT_MAX_CLIENTS,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            enqueue_wait: DEFAULT_ENQUEUE_WAIT,
            poll_interval: Duration::from_millis(2),
            handshake_timeout: Duration::from_secs(5),
            idle_timeout: None,
            supported: HandshakeParams::new(crate::wire::PROTOCOL_VERSION, 64, 64 * 1024),
        }
    }
}

/// State shared between the acceptor and its workers.
#[derive(Debug)]
pub struct ServerState {
    pub registry: Registry,
    live_workers: AtomicUsize,
    accepted: AtomicUsize,
    shutdown: AtomicBool,
}

impl ServerState {
    pub fn new(max_clients: usize) -> ServerState {
        ServerState {
            registry: Registry::new(max_clients),
            live_workers: AtomicUsize::new(0),
            accepted: AtomicUsize::new(0),
            shutdown: AtomicBool::new(false),
        }
    }

    pub fn live_workers(&self) -> usize {
        self.live_workers.load(Ordering::SeqCst)
    }

    pub fn accepted(&self) -> usize {
        self.accepted.load(Ordering::SeqCst)
    }

    pub fn request_shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }

    pub fn is_shutting_down(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }
}

/// Accepts connections until `state.request_shutdown()`, running one
/// dedicated worker thread per connection. Returns after every worker has
/// been joined.
pub fn serve<A: Acceptor>(mut acceptor: A, config: ServerConfig, state: Arc<ServerState>) {
    let config = Arc::new(config);
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    info!("serving on {}", acceptor.local_addr());
    while !state.is_shutting_down() {
        workers.retain(|w| !w.is_finished());
        let conn = match acceptor.accept_timeout(ACCEPT_POLL) {
            Ok(Some(conn)) => conn,
            Ok(None) => continue,
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
                continue;
            }
        };
        let n = state.accepted.fetch_add(1, Ordering::SeqCst);
        if state.live_workers() >= config.max_clients {
            let mut conn = conn;
            let _ = conn.send_frame(&Message::error(ErrorCode::RecipientBusy, "server full").to_frame());
            let _ = conn.flush(CLOSE_FLUSH);
            continue;
        }
        state.live_workers.fetch_add(1, Ordering::SeqCst);
        let worker_state = state.clone();
        let worker_config = config.clone();
        let spawned = thread::Builder::new()
            .name(format!("client-{n}"))
            .spawn(move || Worker::new(conn, worker_config, worker_state).run());
        match spawned {
            Ok(handle) => workers.push(handle),
            Err(e) => {
                warn!("could not spawn worker: {e}");
                state.live_workers.fetch_sub(1, Ordering::SeqCst);
            }
        }
    }
    for w in workers {
        if w.join().is_err() {
            warn!("worker panicked");
        }
    }
    info!("server stopped");
}

/// A relay server running on a background acceptor thread.
pub struct Server {
    state: Arc<ServerState>,
    acceptor: Option<JoinHandle<()>>,
    addr: std::net::SocketAddr,
}

impl Server {
    pub fn start<A: Acceptor + 'static>(acceptor: A, config: ServerConfig) -> Server {
        let state = Arc::new(ServerState::new(config.max_clients));
        let addr = acceptor.local_addr();
        let s = state.clone();
        let handle = thread::Builder::new()
            .name("acceptor".into())
            .spawn(move || serve(acceptor, config, s))
            .expect("spawn acceptor thread");
        Server {
            state,
            acceptor: Some(handle),
            addr,
        }
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn state(&self) -> &Arc<ServerState> {
        &self.state
    }

    pub fn registry(&self) -> &Registry {
        &self.state.registry
    }

    /// Stops accepting, lets workers notice, and joins everything.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.state.request_shutdown();
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

enum Flow {
    Continue,
    Close,
}

/// Per-connection worker: handshake, registration, request loop, cleanup.
/// Cleanup lives in `Drop` so it also runs when the worker panics.
struct Worker<C: FrameTransport> {
    conn: C,
    config: Arc<ServerConfig>,
    state: Arc<ServerState>,
    handle: DeliveryHandle,
    mailbox: Mailbox,
    id: Option<ClientId>,
}

impl<C: FrameTransport> Worker<C> {
    fn new(conn: C, config: Arc<ServerConfig>, state: Arc<ServerState>) -> Self {
        let (handle, mailbox) = mailbox(config.queue_capacity, config.supported.max_payload);
        Worker {
            conn,
            config,
            state,
            handle,
            mailbox,
            id: None,
        }
    }

    fn peer(&self) -> String {
        self.conn
            .info()
            .remote_addr
            .map_or_else(|| "?".into(), |a| a.to_string())
    }

    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.conn.send_frame(&msg.to_frame())
    }

    fn send_error(&mut self, code: ErrorCode, detail: impl Into<String>) -> Result<(), TransportError> {
        self.send(&Message::error(code, detail))
    }

    fn run(mut self) {
        match self.handshake() {
            Ok(true) => {}
            Ok(false) => return,
            Err(e) => {
                debug!("{}: handshake failed: {e}", self.peer());
                return;
            }
        }
        if let Err(e) = self.request_loop() {
            debug!("{}: worker ending: {e}", self.peer());
        }
        let _ = self.conn.flush(CLOSE_FLUSH);
    }

    /// `Ok(false)` when the client was refused.
    fn handshake(&mut self) -> Result<bool, TransportError> {
        let frame = self.conn.recv_frame(self.config.handshake_timeout)?;
        let proposal = match Message::from_frame(&frame) {
            Ok(Message::Hello(p)) => p,
            _ => {
                self.send_error(ErrorCode::Malformed, "expected HELLO")?;
                let _ = self.conn.flush(CLOSE_FLUSH);
                return Ok(false);
            }
        };
        let mut supported = self.config.supported;
        if let Some(limit) = self.conn.payload_limit() {
            supported.max_payload = supported.max_payload.min(limit);
        }
        match negotiate(proposal, supported) {
            Ok(agreed) => {
                self.send(&Message::HelloAck(agreed))?;
                self.conn.apply_params(&agreed);
                self.handle.set_max_payload(agreed.max_payload);
                Ok(true)
            }
            Err(e) => {
                let code = match e {
                    NegotiateError::VersionMismatch { .. } => ErrorCode::VersionMismatch,
                    NegotiateError::InvalidParams(_) => ErrorCode::Malformed,
                };
                self.send_error(code, e.to_string())?;
                let _ = self.conn.flush(CLOSE_FLUSH);
                Ok(false)
            }
        }
    }

    fn request_loop(&mut self) -> Result<(), TransportError> {
        let mut last_heard = Instant::now();
        while !self.state.is_shutting_down() {
            let received = self.conn.recv_frame(self.config.poll_interval);
            // DELIVERs queued before a request go out before its reply.
            while let Some(frame) = self.mailbox.try_take() {
                self.conn.send_frame(&frame)?;
            }
            match received {
                Ok(frame) => {
                    last_heard = Instant::now();
                    if let Flow::Close = self.handle_frame(frame)? {
                        return Ok(());
                    }
                }
                Err(TransportError::TimedOut) => {
                    if let Some(idle) = self.config.idle_timeout {
                        if last_heard.elapsed() >= idle {
                            return Err(TransportError::TimedOut);
                        }
                    }
                }
                Err(e) if e.is_disconnect() => return Err(e),
                Err(e) => {
                    self.send_error(ErrorCode::Malformed, e.to_string())?;
                    // A byte stream cannot resynchronise after garbage; a
                    // datagram loses only itself.
                    if self.conn.info().mode == Mode::Stream {
                        return Err(e);
                    }
                }
            }
        }
        Ok(())
    }

    fn handle_frame(&mut self, frame: Frame) -> Result<Flow, TransportError> {
        let msg = match Message::from_frame(&frame) {
            Ok(m) => m,
            Err(e) => {
                self.send_error(ErrorCode::Malformed, e.to_string())?;
                return Ok(Flow::Continue);
            }
        };
        match msg {
            Message::Echo(body) => self.send(&Message::EchoReply(body))?,
            Message::Bye => return Ok(Flow::Close),
            Message::Register(id) => self.register(id)?,
            Message::Direct { to, body } => {
                let Some(from) = self.id.clone() else {
                    self.send_error(ErrorCode::NotRegistered, "register first")?;
                    return Ok(Flow::Continue);
                };
                if let Err(e) = route_direct(&self.state.registry, &from, &to, &body, self.config.enqueue_wait) {
                    self.send_error(e.code(), format!("{to}: {e}"))?;
                }
            }
            Message::Broadcast(body) => {
                let Some(from) = self.id.clone() else {
                    self.send_error(ErrorCode::NotRegistered, "register first")?;
                    return Ok(Flow::Continue);
                };
                let out = broadcast(&self.state.registry, &from, &body, self.config.enqueue_wait);
                debug!("{from}: broadcast reached {}/{}", out.delivered, out.recipients);
            }
            other => {
                self.send_error(ErrorCode::Malformed, format!("unexpected {:?}", other.kind()))?;
            }
        }
        Ok(Flow::Continue)
    }

    fn register(&mut self, id: ClientId) -> Result<(), TransportError> {
        if let Some(current) = &self.id {
            let detail = format!("already registered as {current}");
            return self.send_error(ErrorCode::Malformed, detail);
        }
        match self.state.registry.register(id.clone(), self.handle.clone()) {
            Ok(()) => {
                debug!("{}: registered {id}", self.peer());
                self.id = Some(id);
                self.send(&Message::RegisterAck)
            }
            Err(RegistryError::DuplicateId) => self.send_error(ErrorCode::DuplicateId, id.to_string()),
            Err(RegistryError::Full) => self.send_error(ErrorCode::RecipientBusy, "registry full"),
        }
    }
}

impl<C: FrameTransport> Drop for Worker<C> {
    fn drop(&mut self) {
        if let Some(id) = self.id.take() {
            self.state.registry.unregister(&id, &self.handle);
            debug!("unregistered {id}");
        }
        self.state.live_workers.fetch_sub(1, Ordering::SeqCst);
    }
}
