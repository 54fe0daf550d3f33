//! Seed derivation. A trial's seed is `master ^ trial_index`; each trial then draws
//! independent ChaCha streams for the hypothesis, the data, the curator and the analyst.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Hypothesis = 0,
    Data = 1,
    Curator = 2,
    Analyst = 3,
    Aux = 4,
}

pub fn trial_seed(master: u64, trial: u64) -> u64 {
    master ^ trial
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Well-mixed child seed for sub-tasks such as code-search tries or condition retries.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

pub fn stream_rng(seed: u64, stream: Stream) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// 64-bit FNV-1a, used for stable digests of samples and configs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = stream_rng(5, Stream::Data).random();
        let b: u64 = stream_rng(5, Stream::Curator).random();
        let c: u64 = stream_rng(5, Stream::Data).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert_eq!(trial_seed(0b1100, 0b1010), 0b0110);
        assert_ne!(derive_seed(1, 2), derive_seed(2, 1));
    }
}
