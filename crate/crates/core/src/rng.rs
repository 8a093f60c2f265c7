//! Keyed random streams.
//!
//! Every random draw comes from a ChaCha8 generator whose 256-bit key is a
//! pure function of `(seed, domain, indices...)`, so a stream never depends on
//! how many numbers other streams consumed or in what order work ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Separates streams that would otherwise share index tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Federation = 0x6665_6465_7261_7469,
    Sampler = 0x7361_6d70_6c65_7273,
    ClientNoise = 0x6e6f_6973_6563_6c69,
    Verify = 0x7665_7269_6679_0000,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn absorb(state: u64, word: u64) -> u64 {
    splitmix64(state ^ splitmix64(word))
}

/// Opens the stream for `(seed, domain, indices)`.
pub fn stream(seed: u64, domain: Domain, indices: &[u64]) -> StreamRng {
    let mut h = absorb(splitmix64(seed), domain as u64);
    for &i in indices {
        h = absorb(h, i);
    }
    let mut key = [0u8; 32];
    for (lane, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = splitmix64(h.wrapping_add((lane as u64).wrapping_mul(GOLDEN)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Derives a 64-bit seed from a parent seed and arbitrary bytes.
pub fn derive_seed(parent: u64, parts: &[&[u8]]) -> u64 {
    let mut h = splitmix64(parent);
    for part in parts {
        h = absorb(h, part.len() as u64);
        for chunk in part.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            h = absorb(h, u64::from_le_bytes(buf));
        }
    }
    h
}

/// The noise streams for one client in one round; step `k` gets its own
/// substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientRoundStream {
    pub seed: u64,
    pub client: usize,
    pub round: usize,
}

impl ClientRoundStream {
    pub fn new(seed: u64, client: usize, round: usize) -> Self {
        ClientRoundStream {
            seed,
            client,
            round,
        }
    }

    pub fn step(&self, k: usize) -> StreamRng {
        stream(
            self.seed,
            Domain::ClientNoise,
            &[self.client as u64, self.round as u64, k as u64],
        )
    }
}

/// Stream used for the participant draw of `round`.
pub fn sampler_stream(seed: u64, round: usize) -> StreamRng {
    stream(seed, Domain::Sampler, &[round as u64])
}
