//! Seeded, named random streams.
//!
//! Every trial draws from ChaCha8 generators keyed by `(seed, stream)`. The
//! environment streams (system and model noise) are shared by all bandit
//! algorithms of a trial; the selection stream is separate so that one
//! algorithm's sampling never shifts another algorithm's environment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub type StreamRng = ChaCha8Rng;

/// Offset between environment and selection seeds of the same trial.
pub const SELECTION_SEED_OFFSET: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    System = 0,
    Models = 1,
    Selection = 2,
}

pub fn stream_rng(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialSeeds {
    pub environment: u64,
    pub selection: u64,
}

impl TrialSeeds {
    pub fn for_trial(base_seed: u64, trial: usize) -> Self {
        let environment = base_seed.wrapping_add(trial as u64);
        Self {
            environment,
            selection: environment.wrapping_add(SELECTION_SEED_OFFSET),
        }
    }

    pub fn system(&self) -> StreamRng {
        stream_rng(self.environment, Stream::System)
    }

    pub fn models(&self) -> StreamRng {
        stream_rng(self.environment, Stream::Models)
    }

    pub fn selection(&self) -> StreamRng {
        stream_rng(self.selection, Stream::Selection)
    }
}
