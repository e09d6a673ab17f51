//! Stable seed derivation.
//!
//! `std::hash` gives no cross-version stability guarantee, so derived seeds
//! use FNV-1a over the identifier followed by a SplitMix64 finalizer.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Seed for stream `k` of instance `id` under a run seed.
pub fn derive(seed: u64, id: &str, k: u64) -> u64 {
    let h = splitmix64(seed ^ fnv1a(id.as_bytes()));
    splitmix64(h ^ splitmix64(k.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Seed for a numbered sub-stream (training step, iteration, ...).
pub fn derive_step(seed: u64, tag: &str, step: u64) -> u64 {
    derive(seed, tag, step)
}
