// SPDX-License-Identifier: Apache-2.0

//! Simulated uninitialised memory for in-process targets.
//!
//! Before each execution the arena is either zeroed (what a fresh process
//! sees from the OS) or tiled with an 8-byte pattern seeded from the current
//! secret input. Targets that read bytes they never wrote therefore observe a
//! deterministic, secret-dependent value instead of genuine undefined memory.

pub const DEFAULT_ARENA_SIZE: usize = 4096;

/// SplitMix64, seeded from a single `u64`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Eight bytes tiled across memory before a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FillPattern(pub [u8; 8]);

impl FillPattern {
    pub fn bytes(&self) -> [u8; 8] {
        self.0
    }

    /// Byte at position `index` of a region tiled with this pattern.
    #[inline]
    pub fn at(&self, index: usize) -> u8 {
        self.0[index % 8]
    }
}

/// Seeds SplitMix64 with the first eight secret bytes (little-endian,
/// zero-padded) and takes one output. An all-zero result becomes `0xA5` x8.
pub fn derive_fill_pattern(secret: &[u8]) -> FillPattern {
    let mut seed = [0u8; 8];
    let n = secret.len().min(8);
    seed[..n].copy_from_slice(&secret[..n]);
    let bytes = SplitMix64::new(u64::from_le_bytes(seed))
        .next_u64()
        .to_le_bytes();
    if bytes == [0u8; 8] {
        FillPattern([0xA5; 8])
    } else {
        FillPattern(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ArenaConfig {
    pub size: usize,
    pub fill_enabled: bool,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_ARENA_SIZE,
            fill_enabled: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemoryArena {
    cells: Vec<u8>,
    fill_enabled: bool,
}

impl MemoryArena {
    pub fn new(config: ArenaConfig) -> Self {
        Self {
            cells: vec![0u8; config.size],
            fill_enabled: config.fill_enabled,
        }
    }

    pub fn fill_enabled(&self) -> bool {
        self.fill_enabled
    }

    /// Resets every cell for a run on `secret`.
    pub fn prepare(&mut self, secret: &[u8]) {
        if self.fill_enabled {
            let pattern = derive_fill_pattern(secret).bytes();
            for chunk in self.cells.chunks_mut(8) {
                chunk.copy_from_slice(&pattern[..chunk.len()]);
            }
        } else {
            self.cells.fill(0);
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// Reads `len` bytes at `offset`; cells outside the arena read as zero.
    pub fn read(&self, offset: usize, len: usize) -> Vec<u8> {
        (offset..offset + len)
            .map(|i| self.cells.get(i).copied().unwrap_or(0))
            .collect()
    }

    /// Writes `bytes` at `offset`; writes past the end are dropped.
    pub fn write(&mut self, offset: usize, bytes: &[u8]) {
        for (i, &b) in bytes.iter().enumerate() {
            if let Some(cell) = self.cells.get_mut(offset + i) {
                *cell = b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // Reference SplitMix64 stream for seed 0.
        let mut g = SplitMix64::new(0);
        assert_eq!(g.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(g.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn pattern_is_deterministic() {
        assert_eq!(
            derive_fill_pattern(b"secret"),
            derive_fill_pattern(b"secret")
        );
    }

    #[test]
    fn pattern_depends_on_secret() {
        let one = derive_fill_pattern(&[0x01]);
        let two = derive_fill_pattern(&[0x02]);
        assert_ne!(one, two);
        assert_eq!(one.0, SplitMix64::new(1).next_u64().to_le_bytes());
        assert_eq!(two.0, SplitMix64::new(2).next_u64().to_le_bytes());
    }

    #[test]
    fn empty_secret_is_zero_padded() {
        assert_eq!(derive_fill_pattern(&[]), derive_fill_pattern(&[0u8; 8]));
        // only the first eight bytes seed the generator
        assert_eq!(
            derive_fill_pattern(&[0u8; 8]),
            derive_fill_pattern(&[0, 0, 0, 0, 0, 0, 0, 0, 9])
        );
    }

    #[test]
    fn pattern_never_all_zero() {
        for s in 0..=255u8 {
            assert_ne!(derive_fill_pattern(&[s]).0, [0u8; 8]);
        }
    }

    #[test]
    fn prepare_tiles_or_zeroes() {
        let mut arena = MemoryArena::new(ArenaConfig {
            size: 20,
            fill_enabled: true,
        });
        arena.prepare(&[3]);
        let p = derive_fill_pattern(&[3]);
        for (i, &c) in arena.cells().iter().enumerate() {
            assert_eq!(c, p.at(i));
        }

        let mut zeroed = MemoryArena::new(ArenaConfig {
            size: 20,
            fill_enabled: false,
        });
        zeroed.write(0, &[1, 2, 3]);
        zeroed.prepare(&[3]);
        assert!(zeroed.cells().iter().all(|&c| c == 0));
    }

    #[test]
    fn out_of_range_access_is_ignored() {
        let mut arena = MemoryArena::new(ArenaConfig {
            size: 4,
            fill_enabled: false,
        });
        arena.write(2, &[7, 7, 7]);
        assert_eq!(arena.read(2, 4), vec![7, 7, 0, 0]);
    }
}
