//! Named random streams.
//!
//! Every stream is a ChaCha8 generator whose 64-bit seed is derived from the
//! master seed, an ASCII label and a list of integer ids:
//!
//! ```text
//! h = 0xcbf29ce484222325                      (FNV-1a offset basis)
//! for byte in label: h = (h ^ byte) * 0x100000001b3
//! s = splitmix64(master ^ h)
//! for id in ids:     s = splitmix64(s ^ id)
//! ```
//!
//! `splitmix64` is the standard finalizer (add `0x9e3779b97f4a7c15`, then
//! xor-shift-multiply by `0xbf58476d1ce4e5b9` and `0x94d049bb133111eb`).
//! The result seeds `ChaCha8Rng::seed_from_u64`. Uniform `f64` draws use
//! `rand`'s 53-bit mantissa conversion; Gaussian draws use `rand_distr`'s
//! `StandardNormal` (ziggurat).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, label: &str, ids: &[u64]) -> u64 {
    ids.iter()
        .fold(splitmix64(master ^ fnv1a(label.as_bytes())), |s, &id| {
            splitmix64(s ^ id)
        })
}

pub fn stream(master: u64, label: &str, ids: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, ids))
}
