//! Frame format, message kinds and the HELLO/HELLO_ACK negotiation.
//!
//! Every frame on the wire is laid out as
//!
//! ```text
//! +------+------+---------+------+----------------+-------------+---------+
//! | 0x5A | 0x48 | version | kind | length (u32 BE)| sum (u16 BE)| payload |
//! +------+------+---------+------+----------------+-------------+---------+
//! ```
//!
//! where `sum` is the byte-sum of the payload modulo 65536. The header is not
//! covered by the checksum; corruption there is caught by the magic, version,
//! kind and length checks.

use std::fmt;

use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x5A, 0x48];
pub const PROTOCOL_VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
/// Longest client ID, in bytes of UTF-8.
pub const MAX_ID_LEN: usize = 64;

/// Byte-sum of `bytes` modulo 65536.
pub fn checksum(bytes: &[u8]) -> u16 {
    bytes
        .iter()
        .fold(0u16, |acc, &b| acc.wrapping_add(u16::from(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Hello = 0x01,
    HelloAck = 0x02,
    Register = 0x03,
    RegisterAck = 0x04,
    Direct = 0x05,
    Deliver = 0x06,
    Broadcast = 0x07,
    Echo = 0x08,
    EchoReply = 0x09,
    Error = 0x0A,
    Bye = 0x0B,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::Hello,
        Kind::HelloAck,
        Kind::Register,
        Kind::RegisterAck,
        Kind::Direct,
        Kind::Deliver,
        Kind::Broadcast,
        Kind::Echo,
        Kind::EchoReply,
        Kind::Error,
        Kind::Bye,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Kind> {
        match code {
            0x01..=0x0B => Some(Kind::ALL[usize::from(code - 1)]),
            _ => None,
        }
    }
}

/// One wire message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: Kind,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: Kind, payload: impl Into<Vec<u8>>) -> Frame {
        Frame {
            kind,
            payload: payload.into(),
        }
    }

    pub fn empty(kind: Kind) -> Frame {
        Frame::new(kind, Vec::new())
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Appends the encoded frame to `out`.
    ///
    /// Payloads longer than `u32::MAX` bytes cannot be represented and panic.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let len = u32::try_from(self.payload.len()).expect("frame payload exceeds u32 length");
        out.extend_from_slice(&MAGIC);
        out.push(PROTOCOL_VERSION);
        out.push(self.kind.code());
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&checksum(&self.payload).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic bytes {0:02X?}")]
    BadMagic([u8; 2]),
    #[error("unsupported protocol version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown frame kind {0:#04x}")]
    UnknownKind(u8),
    #[error("frame declares {declared} payload bytes but only {available} are present")]
    LengthMismatch { declared: usize, available: usize },
    #[error("checksum mismatch: header says {expected:#06x}, payload sums to {actual:#06x}")]
    ChecksumMismatch { expected: u16, actual: u16 },
}

/// A decoded frame plus the number of input bytes that followed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub frame: Frame,
    pub unconsumed: usize,
}

/// Validates a frame header and returns `(kind, payload_len, checksum)`.
///
/// Needs at least [`HEADER_LEN`] bytes; shorter input is a `LengthMismatch`.
pub fn decode_header(bytes: &[u8]) -> Result<(Kind, usize, u16), DecodeError> {
    if bytes.len() < HEADER_LEN {
        // Still report magic corruption first when we can see it.
        if bytes.len() >= 2 && bytes[..2] != MAGIC {
            return Err(DecodeError::BadMagic([bytes[0], bytes[1]]));
        }
        return Err(DecodeError::LengthMismatch {
            declared: HEADER_LEN,
            available: bytes.len(),
        });
    }
    if bytes[..2] != MAGIC {
        return Err(DecodeError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes[2] != PROTOCOL_VERSION {
        return Err(DecodeError::BadVersion(bytes[2]));
    }
    let kind = Kind::from_code(bytes[3]).ok_or(DecodeError::UnknownKind(bytes[3]))?;
    let len = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let sum = u16::from_be_bytes([bytes[8], bytes[9]]);
    Ok((kind, len, sum))
}

pub fn decode_frame(bytes: &[u8]) -> Result<Decoded, DecodeError> {
    let (kind, len, expected) = decode_header(bytes)?;
    let available = bytes.len() - HEADER_LEN;
    if available < len {
        return Err(DecodeError::LengthMismatch {
            declared: len,
            available,
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    let actual = checksum(payload);
    if actual != expected {
        return Err(DecodeError::ChecksumMismatch { expected, actual });
    }
    Ok(Decoded {
        frame: Frame::new(kind, payload),
        unconsumed: available - len,
    })
}

/// Session parameters agreed during the handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandshakeParams {
    pub version: u8,
    /// ARQ window size in segments.
    pub window: u16,
    /// Largest frame payload either side may send.
    pub max_payload: u32,
}

impl Default for HandshakeParams {
    fn default() -> Self {
        HandshakeParams {
            version: PROTOCOL_VERSION,
            window: 8,
            max_payload: 1024,
        }
    }
}

impl HandshakeParams {
    pub const ENCODED_LEN: usize = 7;

    pub fn new(version: u8, window: u16, max_payload: u32) -> HandshakeParams {
        HandshakeParams {
            version,
            window,
            max_payload,
        }
    }

    pub fn validate(&self) -> Result<(), NegotiateError> {
        if self.window == 0 || self.max_payload == 0 {
            return Err(NegotiateError::InvalidParams(*self));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[0] = self.version;
        out[1..3].copy_from_slice(&self.window.to_be_bytes());
        out[3..7].copy_from_slice(&self.max_payload.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<HandshakeParams> {
        if bytes.len() != Self::ENCODED_LEN {
            return None;
        }
        Some(HandshakeParams {
            version: bytes[0],
            window: u16::from_be_bytes([bytes[1], bytes[2]]),
            max_payload: u32::from_be_bytes([bytes[3], bytes[4], bytes[5], bytes[6]]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NegotiateError {
    #[error("version mismatch: proposed {proposed}, supported {supported}")]
    VersionMismatch { proposed: u8, supported: u8 },
    #[error("invalid handshake parameters {0:?}")]
    InvalidParams(HandshakeParams),
}

/// Agrees on session parameters: exact version match, component-wise minimum
/// of window and max payload.
pub fn negotiate(
    proposal: HandshakeParams,
    supported: HandshakeParams,
) -> Result<HandshakeParams, NegotiateError> {
    proposal.validate()?;
    supported.validate()?;
    if proposal.version != supported.version {
        return Err(NegotiateError::VersionMismatch {
            proposed: proposal.version,
            supported: supported.version,
        });
    }
    Ok(HandshakeParams {
        version: proposal.version,
        window: proposal.window.min(supported.window),
        max_payload: proposal.max_payload.min(supported.max_payload),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    DuplicateId = 1,
    UnknownRecipient = 2,
    Malformed = 3,
    NotRegistered = 4,
    RecipientBusy = 5,
    VersionMismatch = 6,
}

impl ErrorCode {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ErrorCode> {
        Some(match code {
            1 => ErrorCode::DuplicateId,
            2 => ErrorCode::UnknownRecipient,
            3 => ErrorCode::Malformed,
            4 => ErrorCode::NotRegistered,
            5 => ErrorCode::RecipientBusy,
            6 => ErrorCode::VersionMismatch,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::DuplicateId => "DuplicateId",
            ErrorCode::UnknownRecipient => "UnknownRecipient",
            ErrorCode::Malformed => "Malformed",
            ErrorCode::NotRegistered => "NotRegistered",
            ErrorCode::RecipientBusy => "RecipientBusy",
            ErrorCode::VersionMismatch => "VersionMismatch",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated client identifier: UTF-8, 1..=64 bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientId(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("client id is empty")]
    Empty,
    #[error("client id is {0} bytes, limit is 64")]
    TooLong(usize),
    #[error("client id is not valid UTF-8")]
    NotUtf8,
}

impl ClientId {
    pub fn new(id: impl Into<String>) -> Result<ClientId, IdError> {
        let id = id.into();
        match id.len() {
            0 => Err(IdError::Empty),
            n if n > MAX_ID_LEN => Err(IdError::TooLong(n)),
            _ => Ok(ClientId(id)),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ClientId, IdError> {
        let s = std::str::from_utf8(bytes).map_err(|_| IdError::NotUtf8)?;
        ClientId::new(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Typed view of a frame's payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello(HandshakeParams),
    HelloAck(HandshakeParams),
    Register(ClientId),
    RegisterAck,
    Direct { to: ClientId, body: Vec<u8> },
    Deliver { from: ClientId, body: Vec<u8> },
    Broadcast(Vec<u8>),
    Echo(Vec<u8>),
    EchoReply(Vec<u8>),
    Error { code: ErrorCode, detail: String },
    Bye,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("{kind:?} payload has wrong length {len}")]
    BadLength { kind: Kind, len: usize },
    #[error("bad client id: {0}")]
    BadId(#[from] IdError),
    #[error("id length prefix {0} overruns payload")]
    IdOverrun(usize),
    #[error("unknown error code {0}")]
    UnknownErrorCode(u8),
}

fn split_id(payload: &[u8]) -> Result<(ClientId, &[u8]), PayloadError> {
    let (&len, rest) = payload.split_first().ok_or(PayloadError::IdOverrun(0))?;
    let len = usize::from(len);
    if rest.len() < len {
        return Err(PayloadError::IdOverrun(len));
    }
    let id = ClientId::from_bytes(&rest[..len])?;
    Ok((id, &rest[len..]))
}

fn prefixed_id(id: &ClientId, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + id.as_bytes().len() + body.len());
    out.push(id.as_bytes().len() as u8);
    out.extend_from_slice(id.as_bytes());
    out.extend_from_slice(body);
    out
}

impl Message {
    pub fn kind(&self) -> Kind {
        match self {
            Message::Hello(_) => Kind::Hello,
            Message::HelloAck(_) => Kind::HelloAck,
            Message::Register(_) => Kind::Register,
            Message::RegisterAck => Kind::RegisterAck,
            Message::Direct { .. } => Kind::Direct,
            Message::Deliver { .. } => Kind::Deliver,
            Message::Broadcast(_) => Kind::Broadcast,
            Message::Echo(_) => Kind::Echo,
            Message::EchoReply(_) => Kind::EchoReply,
            Message::Error { .. } => Kind::Error,
            Message::Bye => Kind::Bye,
        }
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Message {
        Message::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_frame(&self) -> Frame {
        let payload = match self {
            Message::Hello(p) | Message::HelloAck(p) => p.to_bytes().to_vec(),
            Message::Register(id) => id.as_bytes().to_vec(),
            Message::RegisterAck | Message::Bye => Vec::new(),
            Message::Direct { to, body } => prefixed_id(to, body),
            Message::Deliver { from, body } => prefixed_id(from, body),
            Message::Broadcast(b) | Message::Echo(b) | Message::EchoReply(b) => b.clone(),
            Message::Error { code, detail } => {
                let mut out = vec![code.code()];
                out.extend_from_slice(detail.as_bytes());
                out
            }
        };
        Frame::new(self.kind(), payload)
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, PayloadError> {
        let p = frame.payload.as_slice();
        let bad_len = || PayloadError::BadLength {
            kind: frame.kind,
            len: p.len(),
        };
        Ok(match frame.kind {
            Kind::Hello => Message::Hello(HandshakeParams::from_bytes(p).ok_or_else(bad_len)?),
            Kind::HelloAck => {
                Message::HelloAck(HandshakeParams::from_bytes(p).ok_or_else(bad_len)?)
            }
            Kind::Register => Message::Register(ClientId::from_bytes(p)?),
            Kind::RegisterAck if p.is_empty() => Message::RegisterAck,
            Kind::Bye if p.is_empty() => Message::Bye,
            Kind::RegisterAck | Kind::Bye => return Err(bad_len()),
            Kind::Direct => {
                let (to, body) = split_id(p)?;
                Message::Direct {
                    to,
                    body: body.to_vec(),
                }
            }
            Kind::Deliver => {
                let (from, body) = split_id(p)?;
                Message::Deliver {
                    from,
                    body: body.to_vec(),
                }
            }
            Kind::Broadcast => Message::Broadcast(p.to_vec()),
            Kind::Echo => Message::Echo(p.to_vec()),
            Kind::EchoReply => Message::EchoReply(p.to_vec()),
            Kind::Error => {
                let (&code, detail) = p.split_first().ok_or_else(bad_len)?;
                let code = ErrorCode::from_code(code).ok_or(PayloadError::UnknownErrorCode(code))?;
                Message::Error {
                    code,
                    detail: String::from_utf8_lossy(detail).into_owned(),
                }
            }
        })
    }
}

impl From<&Message> for Frame {
    fn from(m: &Message) -> Frame {
        m.to_frame()
    }
}
