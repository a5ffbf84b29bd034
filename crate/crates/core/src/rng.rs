//! Keyed Gaussian streams.
//!
//! Every random draw is addressed by `(seed, replicate, channel, position)`:
//! the seed keys a ChaCha8 generator, `(replicate, channel)` selects one of
//! its 2^64 independent streams and the position is the draw index within
//! the stream. Results are therefore identical for any worker count or
//! scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    /// Standard normals driving step `k` of the noise; channel 0 is the
    /// Brownian increment, channel `j >= 1` completes the joint law of the
    /// per-mode stochastic convolutions.
    Noise(u32),
    /// Draws of the `i`-th initial condition sampler.
    Initial(u32),
    /// Anything else (subsampling, audits).
    Aux(u32),
}

impl Channel {
    fn code(self) -> u64 {
        const FIELD: u64 = 1 << 20;
        match self {
            Channel::Noise(j) => u64::from(j) % FIELD,
            Channel::Initial(i) => FIELD + u64::from(i) % FIELD,
            Channel::Aux(i) => 2 * FIELD + u64::from(i) % FIELD,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KeyedRng {
    seed: u64,
    key: [u8; 32],
}

impl KeyedRng {
    pub fn new(seed: u64) -> Self {
        let key = ChaCha8Rng::seed_from_u64(seed).get_seed();
        Self { seed, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, replicate: u64, channel: Channel) -> NormalStream {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream((replicate << 24) ^ channel.code());
        NormalStream { rng }
    }
}

/// Sequential standard normal draws from one keyed stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.rng.gen()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Draws one standard normal per channel per step for a replicate.
pub struct StepNormals {
    streams: Vec<NormalStream>,
}

impl StepNormals {
    pub fn new(rng: &KeyedRng, replicate: u64, channels: usize) -> Self {
        let streams = (0..channels as u32)
            .map(|j| rng.stream(replicate, Channel::Noise(j)))
            .collect();
        Self { streams }
    }

    #[inline]
    pub fn fill(&mut self, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(self.streams.iter_mut()) {
            *o = s.next_normal();
        }
    }

    /// Discards `steps` steps of every channel.
    pub fn skip(&mut self, steps: usize) {
        for s in &mut self.streams {
            for _ in 0..steps {
                s.next_normal();
            }
        }
    }
}

/// Derives an independent 64-bit seed for a sub-task (splitmix64 finalizer).
pub fn derive_seed(seed: u64, role: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(role.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
