//! Counter-addressed random streams.
//!
//! Each episode owns two ChaCha8 streams derived from its seed: one for the
//! per-step dynamics disturbance and one for respawn positions. Draws are
//! addressed by position rather than consumed sequentially, so the value used
//! at step `t` depends only on `(seed, t)` and never on which policy is driving
//! or how many draws an earlier step happened to use.
//!
//! Layout, for anyone replaying the streams elsewhere:
//!
//! - key: `ChaCha8Rng::seed_from_u64(seed)` (PCG32 seed expansion),
//! - stream id 1 for disturbances, 2 for spawns,
//! - a unit draw is `(next_u64 >> 11) * 2^-53`,
//! - step `t` disturbance reads 64-bit words at word positions `4t` (speed)
//!   and `4t + 2` (steering), each mapped to `U(-1, 1)` as `2u - 1`,
//! - respawn `k` reads word positions `6k`, `6k + 2`, `6k + 4` (x, y, heading).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DISTURBANCE_STREAM: u64 = 1;
const SPAWN_STREAM: u64 = 2;

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// The two `U(-1, 1)` draws of one step. Both are always drawn, whatever the
/// scenario uses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbance {
    pub speed: f64,
    pub steer: f64,
}

impl Disturbance {
    pub const ZERO: Disturbance = Disturbance { speed: 0.0, steer: 0.0 };
}

#[derive(Debug, Clone)]
pub struct DisturbanceStream {
    rng: ChaCha8Rng,
    log: Option<Vec<(u64, Disturbance)>>,
}

impl DisturbanceStream {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DISTURBANCE_STREAM);
        Self { rng, log: None }
    }

    /// Same stream, but every draw is also appended to an in-memory log.
    pub fn with_log(seed: u64) -> Self {
        Self { log: Some(Vec::new()), ..Self::new(seed) }
    }

    pub fn draw(&mut self, step: u64) -> Disturbance {
        self.rng.set_word_pos(u128::from(step) * 4);
        let speed = 2.0 * unit(&mut self.rng) - 1.0;
        let steer = 2.0 * unit(&mut self.rng) - 1.0;
        let d = Disturbance { speed, steer };
        if let Some(log) = &mut self.log {
            log.push((step, d));
        }
        d
    }

    pub fn take_log(&mut self) -> Option<Vec<(u64, Disturbance)>> {
        self.log.take()
    }
}

#[derive(Debug, Clone)]
pub struct SpawnStream {
    rng: ChaCha8Rng,
}

impl SpawnStream {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SPAWN_STREAM);
        Self { rng }
    }

    /// Three unit draws for the `k`-th spawn: x, y and heading fractions.
    pub fn draw(&mut self, k: u64) -> [f64; 3] {
        self.rng.set_word_pos(u128::from(k) * 6);
        [unit(&mut self.rng), unit(&mut self.rng), unit(&mut self.rng)]
    }
}
