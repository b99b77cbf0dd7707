//! Seed derivation. Everything random in a run descends from one master seed.

/// One step of the splitmix64 generator.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sub-stream tag into a seed.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut s = seed ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut s)
}

// Fixed tags for the shared system objects.
pub const CODEBOOK_TAG: u64 = 1;
pub const LDPC_TAG: u64 = 2;
pub const INTERLEAVER_TAG: u64 = 3;
const TRIAL_TAG: u64 = 0x7472_6961_6c00_0000;

/// Seed of Monte Carlo trial `t`; independent of how trials are scheduled.
pub fn trial_seed(master: u64, t: u64) -> u64 {
    mix(master ^ TRIAL_TAG, t)
}
