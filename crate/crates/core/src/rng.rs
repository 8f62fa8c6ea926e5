//! Deterministic random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha8 stream keyed by
//! `(seed, purpose, index)`, so episodes can be regenerated in any order and
//! different algorithms see the same world for the same episode index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Topology = 1,
    Packets = 2,
    Channel = 3,
    Exploration = 4,
    Replay = 5,
    Init = 6,
    Baseline = 7,
    Oracle = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Stream, index: u64) -> SimRng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ purpose as u64) ^ index);
    ChaCha8Rng::seed_from_u64(key)
}

/// 64-bit FNV-1a, used to fingerprint channel realizations.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
