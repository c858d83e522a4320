//! SplitMix64, the keyed generator behind every pixel selection and keyed
//! sign sequence. The constants are the published ones; any implementation
//! that follows them reproduces the same selections bit for bit.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform index in `0..bound` by multiply-shift (Lemire) reduction.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Top bit of the next output.
    pub fn bit(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }
}

/// The SplitMix64 finalizer, also used to derive per-item sub-seeds.
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a label.
pub fn derive_seed(base: u64, label: &[u8]) -> u64 {
    // FNV-1a over the label, then finalized together with the base.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(base ^ mix(h))
}
