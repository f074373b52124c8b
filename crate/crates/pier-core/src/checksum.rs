//! FNV-1a checksums over parameter bytes, used to prove that frozen
//! parameter groups are untouched by later training stages.

use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checksum(pub u64);

#[derive(Debug, Clone)]
pub struct Hasher {
    state: u64,
}

impl Default for Hasher {
    fn default() -> Self {
        Self::new()
    }
}

impl Hasher {
    pub fn new() -> Self {
        Hasher { state: FNV_OFFSET }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.state ^= u64::from(*b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn update_tensor<F: Real>(&mut self, t: &Tensor<F>) {
        let mut buf = alloc::vec::Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            v.write_le_bytes(&mut buf);
        }
        self.update(&buf);
    }

    pub fn finish(&self) -> Checksum {
        Checksum(self.state)
    }
}

pub fn checksum_bytes(bytes: &[u8]) -> Checksum {
    let mut h = Hasher::new();
    h.update(bytes);
    h.finish()
}
