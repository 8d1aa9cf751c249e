use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finaliser; used to derive independent sub-seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(a << 6)
        .wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    let seed = parts.iter().fold(0x5EED_u64, |acc, &p| mix(acc, p));
    ChaCha8Rng::seed_from_u64(seed)
}
