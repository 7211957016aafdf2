//! Deterministic lossy datagram channel driven by a logical clock.
//!
//! Every random decision comes from an xorshift64* generator seeded from
//! [`ChannelConfig::seed`]. Per push, the draws happen in a fixed order:
//! loss, delay, duplicate, duplicate delay, corrupt (then byte index and XOR
//! mask). Draws that cannot matter are skipped: a lost datagram consumes only
//! the loss draw, and an empty payload takes no index or mask draw.

use std::collections::BTreeMap;

use thiserror::Error;

/// Multiplier of the xorshift64* output scrambler.
const XORSHIFT_STAR_MUL: u64 = 0x2545_F491_4F6C_DD1D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("xorshift64* state must be nonzero")]
pub struct ZeroSeed;

/// One xorshift64* step. Returns `(new_state, output)`.
pub fn rng_next(state: u64) -> Result<(u64, u64), ZeroSeed> {
    if state == 0 {
        return Err(ZeroSeed);
    }
    let mut x = state;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    Ok((x, x.wrapping_mul(XORSHIFT_STAR_MUL)))
}

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Result<Rng, ZeroSeed> {
        if seed == 0 {
            return Err(ZeroSeed);
        }
        Ok(Rng { state: seed })
    }

    pub fn next_u64(&mut self) -> u64 {
        // state is nonzero by construction and xorshift never reaches zero
        let (state, out) = rng_next(self.state).expect("xorshift state became zero");
        self.state = state;
        out
    }

    /// Uniform draw in [0, 1): output / 2^64.
    pub fn next_unit(&mut self) -> f64 {
        self.next_u64() as f64 / 18_446_744_073_709_551_616.0
    }

    /// `true` with probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_unit() < p
    }

    /// Uniform integer in `0..n` as `floor(output * n / 2^64)`. `n` must be > 0.
    pub fn below(&mut self, n: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub loss_prob: f64,
    pub dup_prob: f64,
    pub corrupt_prob: f64,
    /// Delays are drawn uniformly from `0..=max_delay` ticks.
    pub max_delay: u64,
    pub seed: u64,
}

impl ChannelConfig {
    /// No loss, duplication, corruption or delay.
    pub fn perfect(seed: u64) -> ChannelConfig {
        ChannelConfig {
            loss_prob: 0.0,
            dup_prob: 0.0,
            corrupt_prob: 0.0,
            max_delay: 0,
            seed,
        }
    }

    pub fn lossy(loss_prob: f64, max_delay: u64, seed: u64) -> ChannelConfig {
        ChannelConfig {
            loss_prob,
            max_delay,
            ..ChannelConfig::perfect(seed)
        }
    }

    pub fn with_seed(self, seed: u64) -> ChannelConfig {
        ChannelConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        for (name, p) in [
            ("loss_prob", self.loss_prob),
            ("dup_prob", self.dup_prob),
            ("corrupt_prob", self.corrupt_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ChannelError::BadProbability { name, value: p });
            }
        }
        if self.seed == 0 {
            return Err(ChannelError::ZeroSeed(ZeroSeed));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ChannelError {
    #[error("{name} = {value} is outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error(transparent)]
    ZeroSeed(#[from] ZeroSeed),
}

/// A datagram waiting for its delivery tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    pub payload: Vec<u8>,
    pub deliver_at: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub pushed: u64,
    pub lost: u64,
    pub duplicated: u64,
    pub corrupted: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
pub struct Channel {
    config: ChannelConfig,
    rng: Rng,
    // Keyed by (deliver_at, insertion counter) so iteration order is the pop order.
    queue: BTreeMap<(u64, u64), Vec<u8>>,
    inserted: u64,
    stats: ChannelStats,
}

impl Channel {
    pub fn new(config: ChannelConfig) -> Result<Channel, ChannelError> {
        config.validate()?;
        Ok(Channel {
            config,
            rng: Rng::new(config.seed)?,
            queue: BTreeMap::new(),
            inserted: 0,
            stats: ChannelStats::default(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Earliest scheduled delivery tick, if anything is in flight.
    pub fn next_delivery(&self) -> Option<u64> {
        self.queue.keys().next().map(|&(t, _)| t)
    }

    pub fn in_flight(&self) -> impl Iterator<Item = InFlight> + '_ {
        self.queue.iter().map(|(&(deliver_at, _), p)| InFlight {
            payload: p.clone(),
            deliver_at,
        })
    }

    fn draw_delay(&mut self) -> u64 {
        self.rng.below(self.config.max_delay.saturating_add(1))
    }

    fn schedule(&mut self, payload: Vec<u8>, deliver_at: u64) {
        self.queue.insert((deliver_at, self.inserted), payload);
        self.inserted += 1;
    }

    pub fn push(&mut self, payload: &[u8], now: u64) {
        self.stats.pushed += 1;
        if self.rng.chance(self.config.loss_prob) {
            self.stats.lost += 1;
            return;
        }
        let delay = self.draw_delay();
        let dup_delay = if self.rng.chance(self.config.dup_prob) {
            Some(self.draw_delay())
        } else {
            None
        };
        let mut payload = payload.to_vec();
        if self.rng.chance(self.config.corrupt_prob) && !payload.is_empty() {
            let idx = self.rng.below(payload.len() as u64) as usize;
            let mask = 1 + self.rng.below(255) as u8;
            payload[idx] ^= mask;
            self.stats.corrupted += 1;
        }
        match dup_delay {
            Some(d) => {
                self.stats.duplicated += 1;
                self.schedule(payload.clone(), now.saturating_add(delay));
                self.schedule(payload, now.saturating_add(d));
            }
            None => self.schedule(payload, now.saturating_add(delay)),
        }
    }

    /// Removes and returns every datagram due at or before `now`, ordered by
    /// delivery tick then insertion order.
    pub fn pop_ready(&mut self, now: u64) -> Vec<Vec<u8>> {
        let later = self.queue.split_off(&(now.saturating_add(1), 0));
        let ready = std::mem::replace(&mut self.queue, later);
        self.stats.delivered += ready.len() as u64;
        ready.into_values().collect()
    }
}
