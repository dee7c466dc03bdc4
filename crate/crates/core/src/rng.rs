//! Keyed random substreams.
//!
//! Every random draw in a training run comes from a ChaCha stream selected by
//! `(master_seed, epoch, view, purpose)`. Two different keys never share a
//! stream, so any view (or the initial weights, or a split) can be rebuilt in
//! isolation from its key alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Purpose {
    EdgeRemoval = 1,
    FeatureMask = 2,
    Init = 3,
    Split = 4,
    Contamination = 5,
    Probe = 6,
    Synthetic = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub epoch: u64,
    pub view: u8,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(master_seed: u64, epoch: u64, view: u8, purpose: Purpose) -> Self {
        StreamKey {
            master_seed,
            epoch,
            view,
            purpose,
        }
    }

    pub fn rng(&self) -> StreamRng {
        assert!(self.epoch < 1 << 48, "epoch index exceeds stream key range");
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream((self.epoch << 16) | ((self.view as u64) << 8) | self.purpose as u64);
        rng
    }
}

/// Shorthand for `StreamKey::new(..).rng()`.
pub fn stream(master_seed: u64, epoch: u64, view: u8, purpose: Purpose) -> StreamRng {
    StreamKey::new(master_seed, epoch, view, purpose).rng()
}
