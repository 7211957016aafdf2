//! Framed message relay over TCP, UDP or an in-memory link, with a seeded
//! lossy-channel simulator and a Go-Back-N layer for unreliable transports.

pub mod wire;
pub mod channel;
pub mod arq;
pub mod transport;
pub mod relay;
pub mod bench;
