//! Fan-out of one run seed into independent per-stage seeds.
//!
//! Stage seed = `splitmix64(root + (stream + 1) * GOLDEN)`, the
//! counter-based form of SplitMix64. Streams are fixed numbers, so adding a
//! stage never shifts the seeds of the others.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Scene = 0,
    Augment = 1,
    Params = 2,
    Dropout = 3,
    Bench = 4,
    Database = 5,
}

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(root: u64, stream: Stream) -> u64 {
    derive_indexed(root, stream as u64)
}

/// Seed for an arbitrary stream number (e.g. one per generated scene).
pub fn derive_indexed(root: u64, stream: u64) -> u64 {
    splitmix64(root.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN)))
}
