//! Deterministic derivation of independent RNG seeds from a master seed.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the task at `path` below `master` (e.g. `[K, L, start]`).
/// Distinct paths give unrelated seeds; the same path always gives the same seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN)))
    })
}

/// Order-sensitive 64-bit fingerprint of a sequence of floats.
pub fn fingerprint(values: impl IntoIterator<Item = f64>) -> u64 {
    values.into_iter().fold(0x243F_6A88_85A3_08D3, |acc, v| {
        // +0.0 and -0.0 hash alike
        let bits = if v == 0.0 { 0 } else { v.to_bits() };
        splitmix64(acc ^ bits)
    })
}
