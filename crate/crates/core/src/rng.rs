//! Seeded generators and worker-independent per-trial seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type TrialRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> TrialRng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with trial coordinates. Stable across platforms and
/// toolchains (unlike `DefaultHasher`), so results never depend on how trials
/// are scheduled.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
