//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, episode, t, agent, purpose)`, so one
//! agent's draws never shift another's and a run can be resumed at any
//! episode boundary without replaying earlier episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Transition,
    Action,
    Init,
    Evaluation,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Transition => 0x7452_414e,
            Purpose::Action => 0x4143_5449,
            Purpose::Init => 0x494e_4954,
            Purpose::Evaluation => 0x4556_414c,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamRng {
    seed: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A family of streams unrelated to this one, e.g. for evaluation
    /// rollouts that must not reuse training draws.
    pub fn derive(&self, purpose: Purpose) -> StreamRng {
        StreamRng::new(splitmix64(splitmix64(self.seed) ^ purpose.tag()))
    }

    /// An independent generator for one `(episode, t, agent, purpose)` cell.
    pub fn stream(&self, episode: u64, t: u64, agent: usize, purpose: Purpose) -> ChaCha8Rng {
        let mut h = splitmix64(self.seed ^ purpose.tag());
        for word in [episode, t, agent as u64] {
            h = splitmix64(h ^ word);
        }
        let mut key = [0u8; 32];
        for (k, chunk) in key.chunks_mut(8).enumerate() {
            h = splitmix64(h.wrapping_add(k as u64));
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// A single uniform draw in `[0, 1)` from the addressed stream.
    pub fn uniform(&self, episode: u64, t: u64, agent: usize, purpose: Purpose) -> f64 {
        self.stream(episode, t, agent, purpose).gen::<f64>()
    }

    pub fn episode(&self, episode: u64) -> EpisodeRng {
        EpisodeRng {
            streams: *self,
            episode,
        }
    }
}

/// The streams of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeRng {
    pub streams: StreamRng,
    pub episode: u64,
}

impl EpisodeRng {
    pub fn uniform(&self, t: u64, agent: usize, purpose: Purpose) -> f64 {
        self.streams.uniform(self.episode, t, agent, purpose)
    }

    pub fn stream(&self, t: u64, agent: usize, purpose: Purpose) -> ChaCha8Rng {
        self.streams.stream(self.episode, t, agent, purpose)
    }
}

/// Index drawn from `probs` by inverse CDF with the uniform `x`. Zero-mass
/// entries are never returned.
pub fn sample_index(probs: &[f64], x: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = k;
        acc += p;
        if x < acc {
            return k;
        }
    }
    last
}
