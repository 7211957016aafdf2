use std::collections::VecDeque;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::transport::{FrameTransport, TransportError};
use crate::wire::{ClientId, ErrorCode, HandshakeParams, Message, PayloadError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("server error {code} ({}): {detail}", code.code())]
    Server { code: ErrorCode, detail: String },
    #[error("bad payload from server: {0}")]
    Payload(#[from] PayloadError),
    #[error("unexpected reply: {0:?}")]
    Unexpected(Message),
}

/// Client side of a relay session over any [`FrameTransport`].
///
/// Messages that arrive while waiting for a specific reply are queued and
/// returned later by [`Client::next_message`].
pub struct Client<T: FrameTransport> {
    conn: T,
    params: HandshakeParams,
    pending: VecDeque<Message>,
}

impl<T: FrameTransport> Client<T> {
    /// Sends HELLO and waits for HELLO_ACK.
    pub fn handshake(mut conn: T, mut proposal: HandshakeParams, timeout: Duration) -> Result<Self, ClientError> {
        if let Some(limit) = conn.payload_limit() {
            proposal.max_payload = proposal.max_payload.min(limit);
        }
        conn.send_frame(&Message::Hello(proposal).to_frame())?;
        let frame = conn.recv_frame(timeout)?;
        match Message::from_frame(&frame)? {
            Message::HelloAck(params) => {
                conn.apply_params(&params);
                Ok(Client {
                    conn,
                    params,
                    pending: VecDeque::new(),
                })
            }
            Message::Error { code, detail } => Err(ClientError::Server { code, detail }),
            other => Err(ClientError::Unexpected(other)),
        }
    }

    pub fn params(&self) -> HandshakeParams {
        self.params
    }

    pub fn transport(&self) -> &T {
        &self.conn
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.conn
    }

    pub fn into_transport(self) -> T {
        self.conn
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.conn.send_frame(&msg.to_frame())?;
        Ok(())
    }

    pub fn register(&mut self, id: &ClientId, timeout: Duration) -> Result<(), ClientError> {
        self.send(&Message::Register(id.clone()))?;
        self.wait_for(timeout, |m| matches!(m, Message::RegisterAck)).map(|_| ())
    }

    pub fn direct(&mut self, to: &ClientId, body: &[u8]) -> Result<(), ClientError> {
        self.send(&Message::Direct {
            to: to.clone(),
            body: body.to_vec(),
        })
    }

    pub fn broadcast(&mut self, body: &[u8]) -> Result<(), ClientError> {
        self.send(&Message::Broadcast(body.to_vec()))
    }

    /// Round trip through ECHO / ECHO_REPLY.
    pub fn ping(&mut self, body: &[u8], timeout: Duration) -> Result<(), ClientError> {
        self.send(&Message::Echo(body.to_vec()))?;
        let want = body.to_vec();
        self.wait_for(timeout, |m| matches!(m, Message::EchoReply(b) if *b == want))
            .map(|_| ())
    }

    pub fn bye(&mut self) -> Result<(), ClientError> {
        self.send(&Message::Bye)?;
        self.conn.flush(Duration::from_secs(1))?;
        Ok(())
    }

    /// Next message from the server, queued ones first.
    pub fn next_message(&mut self, timeout: Duration) -> Result<Message, ClientError> {
        if let Some(m) = self.pending.pop_front() {
            return Ok(m);
        }
        let frame = self.conn.recv_frame(timeout)?;
        Ok(Message::from_frame(&frame)?)
    }

    /// Waits for a message matching `want`. An ERROR frame ends the wait with
    /// `ClientError::Server`; anything else is queued.
    pub fn wait_for(
        &mut self,
        timeout: Duration,
        mut want: impl FnMut(&Message) -> bool,
    ) -> Result<Message, ClientError> {
        if let Some(i) = self.pending.iter().position(&mut want) {
            return Ok(self.pending.remove(i).expect("index in range"));
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::TimedOut.into());
            }
            let msg = Message::from_frame(&self.conn.recv_frame(left)?)?;
            if want(&msg) {
                return Ok(msg);
            }
            if let Message::Error { code, detail } = msg {
                return Err(ClientError::Server { code, detail });
            }
            self.pending.push_back(msg);
        }
    }
}
