//! Deterministic seed derivation. Every stochastic component of a run draws
//! its seed from the run seed plus fixed tags, so two components never share
//! an RNG stream and seeds do not depend on unrelated configuration.

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Chains the base seed with a sequence of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = mix(base);
    for &t in tags {
        h = mix(h ^ t);
    }
    h
}

/// Common purpose tags used by the pipeline.
pub mod tag {
    pub const MODEL_INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const EXPAND: u64 = 4;
    pub const TIE_BREAK: u64 = 5;
}
