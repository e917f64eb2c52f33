//! Counter-based random number generation.
//!
//! Every draw is a pure function of a key tuple, so draws are reproducible
//! across thread counts and enlarging a population preserves the draws of
//! incumbent agents.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix an arbitrary key tuple into a single 64-bit value.
///
/// Each word is absorbed through a splitmix64 round, which is enough to
/// decorrelate neighbouring counters (seed, side, type, agent, choice).
pub fn counter_u64(words: &[u64]) -> u64 {
    let mut state = GOLDEN;
    for (i, &w) in words.iter().enumerate() {
        state = splitmix64(state ^ w.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
    }
    splitmix64(state)
}

/// Uniform draw on the open interval (0, 1) from a key tuple.
pub fn uniform_open01(words: &[u64]) -> f64 {
    // 53 random bits shifted into (0,1); the +0.5 keeps both endpoints open.
    ((counter_u64(words) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard Gumbel draw (location 0, scale 1) from a key tuple.
pub fn gumbel(words: &[u64]) -> f64 {
    -(-uniform_open01(words).ln()).ln()
}
