//! Thread-per-client relay: a shared [`Registry`] maps each client ID to a
//! bounded mailbox owned by that client's worker, and workers route DIRECT
//! and BROADCAST messages by enqueueing DELIVER frames into other mailboxes.
//!
//! The registry lock is held only to insert, remove, look up or snapshot
//! entries. Enqueueing happens outside it.

mod client;
mod server;

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use crossbeam_channel::{Receiver, SendTimeoutError, Sender};
use thiserror::Error;

use crate::wire::{ClientId, ErrorCode, Frame, Message};

pub use client::{Client, ClientError};
pub use server::{serve, Server, ServerConfig, ServerState};

pub const DEFAULT_MAX_CLIENTS: usize = 64;
pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const DEFAULT_ENQUEUE_WAIT: Duration = Duration::from_millis(100);

/// Producer side of a client's mailbox. Any worker may enqueue.
#[derive(Debug, Clone)]
pub struct DeliveryHandle {
    tx: Sender<Frame>,
    max_payload: u32,
}

/// Consumer side of a client's mailbox; only the owning worker holds it.
#[derive(Debug)]
pub struct Mailbox {
    rx: Receiver<Frame>,
}

/// A bounded mailbox. `max_payload` is the largest DELIVER payload its owner
/// agreed to receive.
pub fn mailbox(capacity: usize, max_payload: u32) -> (DeliveryHandle, Mailbox) {
    let (tx, rx) = crossbeam_channel::bounded(capacity);
    (DeliveryHandle { tx, max_payload }, Mailbox { rx })
}

impl DeliveryHandle {
    pub fn same_mailbox(&self, other: &DeliveryHandle) -> bool {
        self.tx.same_channel(&other.tx)
    }

    pub fn set_max_payload(&mut self, max_payload: u32) {
        self.max_payload = max_payload;
    }

    pub fn queued(&self) -> usize {
        self.tx.len()
    }

    fn enqueue(&self, frame: Frame, wait: Duration) -> Result<(), RouteError> {
        if frame.payload.len() > self.max_payload as usize {
            return Err(RouteError::TooLarge {
                len: frame.payload.len(),
                limit: self.max_payload,
            });
        }
        self.tx.send_timeout(frame, wait).map_err(|e| match e {
            SendTimeoutError::Timeout(_) => RouteError::RecipientBusy,
            SendTimeoutError::Disconnected(_) => RouteError::UnknownRecipient,
        })
    }
}

impl Mailbox {
    pub fn try_take(&self) -> Option<Frame> {
        self.rx.try_recv().ok()
    }

    pub fn len(&self) -> usize {
        self.rx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rx.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("client id already registered")]
    DuplicateId,
    #[error("registry is full")]
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("unknown recipient")]
    UnknownRecipient,
    #[error("recipient busy")]
    RecipientBusy,
    #[error("message of {len} bytes exceeds recipient limit {limit}")]
    TooLarge { len: usize, limit: u32 },
}

impl RouteError {
    pub fn code(self) -> ErrorCode {
        match self {
            RouteError::UnknownRecipient => ErrorCode::UnknownRecipient,
            RouteError::RecipientBusy => ErrorCode::RecipientBusy,
            RouteError::TooLarge { .. } => ErrorCode::Malformed,
        }
    }
}

/// Client ID → mailbox table shared by all workers.
#[derive(Debug)]
pub struct Registry {
    entries: Mutex<HashMap<ClientId, DeliveryHandle>>,
    capacity: usize,
}

impl Default for Registry {
    fn default() -> Self {
        Registry::new(DEFAULT_MAX_CLIENTS)
    }
}

impl Registry {
    pub fn new(capacity: usize) -> Registry {
        Registry {
            entries: Mutex::new(HashMap::new()),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn register(&self, id: ClientId, handle: DeliveryHandle) -> Result<(), RegistryError> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&id) {
            return Err(RegistryError::DuplicateId);
        }
        if entries.len() >= self.capacity {
            return Err(RegistryError::Full);
        }
        entries.insert(id, handle);
        Ok(())
    }

    /// Removes `id` only if it still maps to `handle`'s mailbox.
    pub fn unregister(&self, id: &ClientId, handle: &DeliveryHandle) -> bool {
        let mut entries = self.entries.lock().unwrap();
        match entries.get(id) {
            Some(h) if h.same_mailbox(handle) => {
                entries.remove(id);
                true
            }
            _ => false,
        }
    }

    pub fn lookup(&self, id: &ClientId) -> Option<DeliveryHandle> {
        self.entries.lock().unwrap().get(id).cloned()
    }

    pub fn contains(&self, id: &ClientId) -> bool {
        self.entries.lock().unwrap().contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registered IDs, sorted.
    pub fn ids(&self) -> Vec<ClientId> {
        let mut ids: Vec<_> = self.entries.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn snapshot(&self) -> Vec<(ClientId, DeliveryHandle)> {
        self.entries
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

fn deliver_frame(from: &ClientId, body: &[u8]) -> Frame {
    Message::Deliver {
        from: from.clone(),
        body: body.to_vec(),
    }
    .to_frame()
}

/// Enqueues `DELIVER(from, body)` for `to`, waiting up to `wait` for room.
pub fn route_direct(
    registry: &Registry,
    from: &ClientId,
    to: &ClientId,
    body: &[u8],
    wait: Duration,
) -> Result<(), RouteError> {
    let handle = registry.lookup(to).ok_or(RouteError::UnknownRecipient)?;
    handle.enqueue(deliver_frame(from, body), wait)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BroadcastOutcome {
    /// Registered clients other than the sender at snapshot time.
    pub recipients: usize,
    pub delivered: usize,
}

/// Enqueues `DELIVER(from, body)` for every client registered at snapshot
/// time except `from`. Busy or vanished recipients are skipped.
pub fn broadcast(registry: &Registry, from: &ClientId, body: &[u8], wait: Duration) -> BroadcastOutcome {
    let targets: Vec<_> = registry
        .snapshot()
        .into_iter()
        .filter(|(id, _)| id != from)
        .collect();
    let frame = deliver_frame(from, body);
    let delivered = targets
        .iter()
        .filter(|(_, h)| h.enqueue(frame.clone(), wait).is_ok())
        .count();
    BroadcastOutcome {
        recipients: targets.len(),
        delivered,
    }
}
