//! Counter-based random substreams.
//!
//! Every random draw in a run comes from a ChaCha stream keyed by the master
//! seed, selected by `(env index, episode index, purpose)`. The draws of one
//! episode therefore do not depend on thread scheduling or on how many
//! episodes other environments have run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Domain = 1,
    Observation = 2,
    Disturbance = 3,
    Command = 4,
    Action = 5,
    Init = 6,
    Shuffle = 7,
}

/// Identifies one episode of one environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EpisodeSeed {
    pub master: u64,
    pub env: u64,
    pub episode: u64,
}

impl EpisodeSeed {
    pub fn new(master: u64, env: u64, episode: u64) -> Self {
        Self { master, env, episode }
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha8Rng {
        substream(self.master, &[self.env, self.episode, purpose as u64])
    }

    pub fn next_episode(&self) -> Self {
        Self { episode: self.episode + 1, ..*self }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha8 keyed by `master`, on the stream selected by hashing `key`.
pub fn substream(master: u64, key: &[u64]) -> ChaCha8Rng {
    let stream = key.iter().fold(0x5eed_u64, |acc, k| splitmix64(acc ^ splitmix64(*k)));
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}
