// SPDX-License-Identifier: Apache-2.0

//! Edge hit-count map with AFL-style bucketing.

use crate::hash::{hash64, Hash64};

pub const MAP_SIZE: usize = 1 << 16;

/// Bucket index for every raw 8-bit count:
/// 0, 1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128-255 map to 0..=8.
static BUCKET: [u8; 256] = {
    let mut table = [0u8; 256];
    let mut i = 1;
    while i < 256 {
        table[i] = match i {
            1 => 1,
            2 => 2,
            3 => 3,
            4..=7 => 4,
            8..=15 => 5,
            16..=31 => 6,
            32..=127 => 7,
            _ => 8,
        };
        i += 1;
    }
    table
};

#[inline]
pub fn bucket(count: u8) -> u8 {
    BUCKET[count as usize]
}

/// Fixed-size array of saturating 8-bit edge counters.
///
/// Edges that become non-zero through [`hit`](Self::hit) or
/// [`set`](Self::set) are remembered, so resetting and iterating a sparse
/// map touch only those. Handing out the raw slice falls back to full scans
/// until the next reset.
#[derive(Clone)]
pub struct CoverageMap {
    counters: Box<[u8]>,
    touched: Vec<u32>,
    untracked: bool,
}

/// Beyond this many touched edges a full clear is cheaper.
const SPARSE_LIMIT: usize = MAP_SIZE / 32;

impl Default for CoverageMap {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for CoverageMap {
    fn eq(&self, other: &Self) -> bool {
        self.counters == other.counters
    }
}

impl Eq for CoverageMap {}

impl std::fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoverageMap")
            .field("edges_hit", &self.edges_hit())
            .finish()
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        Self {
            counters: vec![0u8; MAP_SIZE].into_boxed_slice(),
            touched: Vec::new(),
            untracked: false,
        }
    }

    fn sparse(&self) -> bool {
        !self.untracked && self.touched.len() <= SPARSE_LIMIT
    }

    pub fn reset(&mut self) {
        if self.sparse() {
            for &e in &self.touched {
                self.counters[e as usize] = 0;
            }
        } else {
            self.counters.fill(0);
        }
        self.touched.clear();
        self.untracked = false;
    }

    /// Records one hit of `edge`, saturating at 255.
    #[inline]
    pub fn hit(&mut self, edge: usize) {
        let i = edge % MAP_SIZE;
        let c = &mut self.counters[i];
        if *c == 0 {
            self.touched.push(i as u32);
        }
        *c = c.saturating_add(1);
    }

    #[inline]
    pub fn get(&self, edge: usize) -> u8 {
        self.counters[edge % MAP_SIZE]
    }

    pub fn set(&mut self, edge: usize, count: u8) {
        let i = edge % MAP_SIZE;
        if self.counters[i] == 0 && count != 0 {
            self.touched.push(i as u32);
        }
        self.counters[i] = count;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.counters
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        self.untracked = true;
        &mut self.counters
    }

    pub fn edges_hit(&self) -> usize {
        self.iter_hit().count()
    }

    /// Iterates `(edge, raw count)` over non-zero counters in edge order.
    pub fn iter_hit(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        let edges: Vec<usize> = if self.sparse() {
            let mut t: Vec<usize> = self.touched.iter().map(|&e| e as usize).collect();
            t.sort_unstable();
            t.dedup();
            t
        } else {
            self.counters
                .chunks_exact(8)
                .enumerate()
                .filter(|(_, w)| u64::from_ne_bytes((*w).try_into().unwrap()) != 0)
                .flat_map(|(i, w)| {
                    w.iter()
                        .enumerate()
                        .filter(|(_, &c)| c != 0)
                        .map(move |(j, _)| i * 8 + j)
                })
                .collect()
        };
        edges
            .into_iter()
            .map(|e| (e, self.counters[e]))
            .filter(|&(_, c)| c != 0)
    }

    /// Digest of the bucketized map, used to name queue entries.
    pub fn digest(&self) -> Hash64 {
        let bucketized: Vec<u8> = self.counters.iter().map(|&c| bucket(c)).collect();
        hash64(&bucketized, 0)
    }
}

/// Per-edge maximum bucket seen so far across a campaign.
#[derive(Clone, Default, Debug)]
pub struct GlobalCoverage {
    buckets: CoverageMap,
}

impl GlobalCoverage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bucket_of(&self, edge: usize) -> u8 {
        self.buckets.get(edge)
    }

    pub fn edges_seen(&self) -> usize {
        self.buckets.edges_hit()
    }
}

/// `true` iff some edge of `run` reaches a higher bucket than recorded in
/// `global`; in that case `global` is raised to the per-edge maximum.
pub fn is_interesting(run: &CoverageMap, global: &mut GlobalCoverage) -> bool {
    let mut novel = false;
    for (edge, count) in run.iter_hit() {
        let b = bucket(count);
        if b > global.buckets.get(edge) {
            global.buckets.set(edge, b);
            novel = true;
        }
    }
    novel
}
