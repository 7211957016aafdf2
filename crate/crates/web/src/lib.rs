//! Browser demo: frame encoding, a Go-Back-N transfer trace and a raw
//! channel run. Each operation is a plain function returning JSON so it can
//! be tested natively; the `#[wasm_bindgen]` exports are thin wrappers.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use relaynet::arq::{numbered_payloads, run_raw, run_transfer_observed, TransferConfig};
use relaynet::channel::ChannelConfig;
use relaynet::wire::{checksum, decode_frame, Frame, Kind, Message, HEADER_LEN};

/// Upper bounds that keep a single call responsive in a browser tab.
pub const MAX_SEGMENTS: usize = 5_000;
pub const MAX_TICKS: u64 = 200_000;
const PAYLOAD_SIZE: usize = 16;

#[derive(Debug, Serialize)]
pub struct EncodedFrame {
    pub kind: String,
    pub hex: String,
    pub header_hex: String,
    pub payload_len: usize,
    pub checksum: u16,
}

/// Encodes `text` as the payload of a frame of kind `kind_code`.
pub fn encode(kind_code: u8, text: &str) -> Result<EncodedFrame, String> {
    let kind = Kind::from_code(kind_code).ok_or_else(|| format!("unknown frame kind {kind_code:#04x}"))?;
    let frame = Frame::new(kind, text.as_bytes());
    let bytes = frame.encode();
    Ok(EncodedFrame {
        kind: format!("{kind:?}"),
        hex: hex::encode(&bytes),
        header_hex: hex::encode(&bytes[..HEADER_LEN]),
        payload_len: frame.payload.len(),
        checksum: checksum(&frame.payload),
    })
}

#[derive(Debug, Serialize)]
pub struct Inspected {
    pub kind: String,
    pub payload_len: usize,
    pub trailing: usize,
    /// The payload read as a typed message, or why it is not one.
    pub message: String,
}

/// Decodes hex bytes (whitespace ignored) as one frame.
pub fn inspect(hex_text: &str) -> Result<Inspected, String> {
    let compact: String = hex_text.split_whitespace().collect();
    let bytes = hex::decode(&compact).map_err(|e| format!("bad hex: {e}"))?;
    let decoded = decode_frame(&bytes).map_err(|e| e.to_string())?;
    let message = match Message::from_frame(&decoded.frame) {
        Ok(m) => format!("{m:?}"),
        Err(e) => format!("not a valid message: {e}"),
    };
    Ok(Inspected {
        kind: format!("{:?}", decoded.frame.kind),
        payload_len: decoded.frame.payload.len(),
        trailing: decoded.unconsumed,
        message,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub loss: f64,
    pub dup: f64,
    pub corrupt: f64,
    pub max_delay: u64,
    pub seed: u64,
}

impl LinkParams {
    fn channel(self) -> Result<ChannelConfig, String> {
        let config = ChannelConfig {
            loss_prob: self.loss,
            dup_prob: self.dup,
            corrupt_prob: self.corrupt,
            max_delay: self.max_delay,
            seed: self.seed,
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

fn check_segments(segments: usize) -> Result<(), String> {
    if segments == 0 || segments > MAX_SEGMENTS {
        return Err(format!("segments must be in 1..={MAX_SEGMENTS}"));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub completed: bool,
    pub delivered: usize,
    pub in_order: bool,
    pub retransmissions: u64,
    pub ticks: u64,
    /// One `[tick, base, next_seq, expected, retransmissions]` row per tick.
    pub samples: Vec<[u64; 5]>,
}

pub fn arq_trace(segments: usize, link: LinkParams, window: u16, timeout: u64) -> Result<Trace, String> {
    check_segments(segments)?;
    if window == 0 || timeout == 0 {
        return Err("window and timeout must be positive".into());
    }
    let payloads = numbered_payloads(segments, PAYLOAD_SIZE);
    let config = TransferConfig::symmetric(link.channel()?, window, timeout, MAX_TICKS);
    let mut samples = Vec::new();
    let stats = run_transfer_observed(&payloads, &config, |s| {
        samples.push([s.tick, s.base.into(), s.next_seq.into(), s.expected.into(), s.retransmissions]);
    })
    .map_err(|e| e.to_string())?;
    Ok(Trace {
        completed: stats.completed,
        delivered: stats.delivered_count,
        in_order: stats.delivered.iter().zip(&payloads).all(|(a, b)| a == b),
        retransmissions: stats.retransmissions,
        ticks: stats.ticks_elapsed,
        samples,
    })
}

#[derive(Debug, Serialize)]
pub struct RawRun {
    pub sent: usize,
    /// Index of each arrival in arrival order; `null` when the bytes match
    /// nothing that was sent.
    pub arrivals: Vec<Option<usize>>,
    pub intact: usize,
    pub in_order: bool,
}

pub fn raw_arrivals(segments: usize, link: LinkParams) -> Result<RawRun, String> {
    check_segments(segments)?;
    let payloads = numbered_payloads(segments, PAYLOAD_SIZE);
    let arrived = run_raw(&payloads, link.channel()?).map_err(|e| e.to_string())?;
    let arrivals: Vec<Option<usize>> = arrived
        .iter()
        .map(|a| {
            let text = std::str::from_utf8(a).ok()?;
            let i: usize = text.strip_prefix("seg-")?.get(..8)?.parse().ok()?;
            (payloads.get(i)? == a).then_some(i)
        })
        .collect();
    Ok(RawRun {
        sent: segments,
        intact: arrivals.iter().flatten().count(),
        in_order: arrived == payloads,
        arrivals,
    })
}

fn json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = encodeFrame)]
pub fn encode_frame_js(kind_code: u8, text: &str) -> Result<String, JsValue> {
    json(encode(kind_code, text))
}

#[wasm_bindgen(js_name = inspectFrame)]
pub fn inspect_frame_js(hex_text: &str) -> Result<String, JsValue> {
    json(inspect(hex_text))
}

#[wasm_bindgen(js_name = arqTrace)]
#[allow(clippy::too_many_arguments)]
pub fn arq_trace_js(
    segments: usize,
    loss: f64,
    dup: f64,
    corrupt: f64,
    max_delay: u32,
    window: u16,
    timeout: u32,
    seed: f64,
) -> Result<String, JsValue> {
    let link = LinkParams { loss, dup, corrupt, max_delay: max_delay.into(), seed: seed as u64 };
    json(arq_trace(segments, link, window, timeout.into()))
}

#[wasm_bindgen(js_name = rawArrivals)]
pub fn raw_arrivals_js(
    segments: usize,
    loss: f64,
    dup: f64,
    corrupt: f64,
    max_delay: u32,
    seed: f64,
) -> Result<String, JsValue> {
    let link = LinkParams { loss, dup, corrupt, max_delay: max_delay.into(), seed: seed as u64 };
    json(raw_arrivals(segments, link))
}
