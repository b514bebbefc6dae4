use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Latency, jitter and loss of one link direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub delay_ms: f64,
    /// Extra delay drawn uniformly from `[0, jitter_ms]` per frame.
    pub jitter_ms: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self { delay_ms: 0.0, jitter_ms: 0.0, drop_prob: 0.0, seed: 0 }
    }
}

impl ChannelModel {
    pub fn is_valid(&self) -> bool {
        self.delay_ms.is_finite()
            && self.delay_ms >= 0.0
            && self.jitter_ms.is_finite()
            && self.jitter_ms >= 0.0
            && (0.0..1.0).contains(&self.drop_prob)
    }

    /// Same impairments with a different seed, for the reverse direction.
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

/// A FIFO channel on a simulated microsecond clock. Jitter delays frames but
/// never reorders them: each delivery time is clamped to at least the
/// previous one.
#[derive(Debug, Clone)]
pub struct Channel<T> {
    model: ChannelModel,
    rng: ChaCha8Rng,
    queue: VecDeque<(u64, T)>,
    last_delivery_us: u64,
    stats: ChannelStats,
}

impl<T> Channel<T> {
    pub fn new(model: ChannelModel) -> Self {
        Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(model.seed),
            queue: VecDeque::new(),
            last_delivery_us: 0,
            stats: ChannelStats::default(),
        }
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Enqueues `item` sent at `now_us`. Returns false if the frame was dropped.
    pub fn push(&mut self, item: T, now_us: u64) -> bool {
        self.stats.sent += 1;
        // Both draws happen for every frame so the stream stays aligned with the seed.
        let drop_draw: f64 = self.rng.random();
        let jitter_draw: f64 = self.rng.random();
        if drop_draw < self.model.drop_prob {
            self.stats.dropped += 1;
            return false;
        }
        let delay_us = libm::round((self.model.delay_ms + jitter_draw * self.model.jitter_ms) * 1000.0) as u64;
        let at = (now_us + delay_us).max(self.last_delivery_us);
        self.last_delivery_us = at;
        self.queue.push_back((at, item));
        true
    }

    /// Removes and returns every frame due at or before `now_us`, in order.
    pub fn poll(&mut self, now_us: u64) -> Vec<T> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|(at, _)| *at <= now_us) {
            if let Some((_, item)) = self.queue.pop_front() {
                out.push(item);
            }
        }
        self.stats.delivered += out.len() as u64;
        out
    }
}
