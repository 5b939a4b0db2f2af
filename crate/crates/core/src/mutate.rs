// SPDX-License-Identifier: Apache-2.0

//! Havoc-style mutation confined to one part of a [`HyperInput`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HyperInput, MAX_PART_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MutationPhase {
    PublicOnly,
    SecretOnly,
    Whole,
}

impl MutationPhase {
    pub const ALL: [MutationPhase; 3] = [
        MutationPhase::PublicOnly,
        MutationPhase::SecretOnly,
        MutationPhase::Whole,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MutatorKind {
    BitFlip,
    ByteSet,
    ByteRandom,
    Arith8,
    Arith16,
    Arith32,
    Interesting8,
    Interesting16,
    Interesting32,
    BlockDelete,
    BlockInsert,
    BlockDuplicate,
    SpliceWithCorpusMember,
}

impl MutatorKind {
    pub const ALL: [MutatorKind; 13] = [
        MutatorKind::BitFlip,
        MutatorKind::ByteSet,
        MutatorKind::ByteRandom,
        MutatorKind::Arith8,
        MutatorKind::Arith16,
        MutatorKind::Arith32,
        MutatorKind::Interesting8,
        MutatorKind::Interesting16,
        MutatorKind::Interesting32,
        MutatorKind::BlockDelete,
        MutatorKind::BlockInsert,
        MutatorKind::BlockDuplicate,
        MutatorKind::SpliceWithCorpusMember,
    ];
}

pub const ARITH_MAX: u32 = 35;
pub const HAVOC_MAX_STACK_POW2: u32 = 4;

pub const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
pub const INTERESTING_16: [i16; 10] = [-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767];
pub const INTERESTING_32: [i32; 8] = [
    -2147483648,
    -100663046,
    -32769,
    32768,
    65535,
    65536,
    100663045,
    2147483647,
];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum WeightsError {
    #[error("phase weights must be three comma-separated numbers, got {0:?}")]
    Syntax(String),
    #[error("phase weights must be finite and non-negative")]
    Negative,
    #[error("phase weights must not all be zero")]
    AllZero,
}

/// Relative scheduling weights for (public, secret, whole).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseWeights([f64; 3]);

impl Default for PhaseWeights {
    fn default() -> Self {
        Self([1.0; 3])
    }
}

impl PhaseWeights {
    pub fn new(public: f64, secret: f64, whole: f64) -> Result<Self, WeightsError> {
        let w = [public, secret, whole];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(WeightsError::Negative);
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(WeightsError::AllZero);
        }
        Ok(Self(w))
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }
}

impl FromStr for PhaseWeights {
    type Err = WeightsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| WeightsError::Syntax(s.into()))?;
        match parts[..] {
            [p, sec, w] => Self::new(p, sec, w),
            _ => Err(WeightsError::Syntax(s.into())),
        }
    }
}

impl fmt::Display for PhaseWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}

pub fn choose_phase<R: Rng + ?Sized>(rng: &mut R, weights: &PhaseWeights) -> MutationPhase {
    let [p, s, w] = weights.0;
    let x = rng.gen::<f64>() * (p + s + w);
    if x < p {
        MutationPhase::PublicOnly
    } else if x < p + s {
        MutationPhase::SecretOnly
    } else if w > 0.0 {
        MutationPhase::Whole
    } else if s > 0.0 {
        // rounding at the upper edge
        MutationPhase::SecretOnly
    } else {
        MutationPhase::PublicOnly
    }
}

/// Source of donor inputs for splicing.
pub trait SpliceSource {
    fn splice_len(&self) -> usize;
    fn splice_input(&self, index: usize) -> &HyperInput;
}

impl SpliceSource for [HyperInput] {
    fn splice_len(&self) -> usize {
        self.len()
    }

    fn splice_input(&self, index: usize) -> &HyperInput {
        &self[index]
    }
}

impl SpliceSource for Vec<HyperInput> {
    fn splice_len(&self) -> usize {
        self.len()
    }

    fn splice_input(&self, index: usize) -> &HyperInput {
        &self[index]
    }
}

/// The bytes a phase may touch. For `Whole`, `split` tracks where the public
/// part ends inside the concatenation.
struct Region {
    buf: Vec<u8>,
    split: Option<usize>,
    max_len: usize,
}

impl Region {
    fn room(&self) -> usize {
        self.max_len.saturating_sub(self.buf.len())
    }

    fn insert<R: Rng + ?Sized>(&mut self, rng: &mut R, pos: usize, bytes: &[u8]) {
        if let Some(split) = self.split.as_mut() {
            if pos < *split || (pos == *split && rng.gen::<bool>()) {
                *split += bytes.len();
            }
        }
        self.buf.splice(pos..pos, bytes.iter().copied());
    }

    fn delete(&mut self, pos: usize, len: usize) {
        if let Some(split) = self.split.as_mut() {
            let overlap = (*split).min(pos + len).saturating_sub(pos);
            *split -= overlap;
        }
        self.buf.drain(pos..pos + len);
    }
}

/// AFL-like block length: usually small, occasionally larger.
fn block_len<R: Rng + ?Sized>(rng: &mut R, limit: usize) -> usize {
    debug_assert!(limit >= 1);
    let cap = match rng.gen_range(0..4) {
        0 | 1 => 8,
        2 => 32,
        _ => 128,
    };
    rng.gen_range(1..=cap.min(limit))
}

fn write_word(buf: &mut [u8], pos: usize, value: u32, width: usize, big_endian: bool) {
    let le = value.to_le_bytes();
    for i in 0..width {
        buf[pos + i] = if big_endian { le[width - 1 - i] } else { le[i] };
    }
}

fn read_word(buf: &[u8], pos: usize, width: usize, big_endian: bool) -> u32 {
    let mut le = [0u8; 4];
    for i in 0..width {
        le[i] = if big_endian {
            buf[pos + width - 1 - i]
        } else {
            buf[pos + i]
        };
    }
    u32::from_le_bytes(le)
}

fn donor_bytes(phase: MutationPhase, donor: &HyperInput) -> Vec<u8> {
    match phase {
        MutationPhase::PublicOnly => donor.public.clone(),
        MutationPhase::SecretOnly => donor.secret.clone(),
        MutationPhase::Whole => [donor.public.as_slice(), donor.secret.as_slice()].concat(),
    }
}

fn applicable(kind: MutatorKind, len: usize, room: usize, can_splice: bool) -> bool {
    use MutatorKind::*;
    match kind {
        BitFlip | ByteSet | ByteRandom | Arith8 | Interesting8 | BlockDelete => len >= 1,
        Arith16 | Interesting16 => len >= 2,
        Arith32 | Interesting32 => len >= 4,
        BlockInsert => room >= 1,
        BlockDuplicate => len >= 1 && room >= 1,
        SpliceWithCorpusMember => can_splice && (len >= 1 || room >= 1),
    }
}

/// Applies one mutator; returns `false` if it could not apply (e.g. an empty donor).
fn apply<R: Rng + ?Sized, C: SpliceSource + ?Sized>(
    kind: MutatorKind,
    region: &mut Region,
    rng: &mut R,
    phase: MutationPhase,
    corpus: &C,
) -> bool {
    use MutatorKind::*;
    let len = region.buf.len();
    match kind {
        BitFlip => {
            let bit = rng.gen_range(0..len * 8);
            region.buf[bit / 8] ^= 0x80 >> (bit % 8);
        }
        ByteSet => {
            let i = rng.gen_range(0..len);
            region.buf[i] = rng.gen();
        }
        ByteRandom => {
            let i = rng.gen_range(0..len);
            region.buf[i] ^= rng.gen_range(1..=255u8);
        }
        Arith8 | Arith16 | Arith32 => {
            let width = match kind {
                Arith8 => 1,
                Arith16 => 2,
                _ => 4,
            };
            let pos = rng.gen_range(0..=len - width);
            let be = width > 1 && rng.gen::<bool>();
            let delta = rng.gen_range(1..=ARITH_MAX);
            let v = read_word(&region.buf, pos, width, be);
            let v = if rng.gen::<bool>() {
                v.wrapping_add(delta)
            } else {
                v.wrapping_sub(delta)
            };
            write_word(&mut region.buf, pos, v, width, be);
        }
        Interesting8 => {
            let i = rng.gen_range(0..len);
            region.buf[i] = INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())] as u8;
        }
        Interesting16 => {
            let pos = rng.gen_range(0..=len - 2);
            let n = INTERESTING_8.len() + INTERESTING_16.len();
            let k = rng.gen_range(0..n);
            let v = if k < INTERESTING_8.len() {
                INTERESTING_8[k] as i16
            } else {
                INTERESTING_16[k - INTERESTING_8.len()]
            };
            write_word(&mut region.buf, pos, v as u16 as u32, 2, rng.gen());
        }
        Interesting32 => {
            let pos = rng.gen_range(0..=len - 4);
            let n = INTERESTING_8.len() + INTERESTING_16.len() + INTERESTING_32.len();
            let k = rng.gen_range(0..n);
            let v = if k < INTERESTING_8.len() {
                INTERESTING_8[k] as i32
            } else if k < INTERESTING_8.len() + INTERESTING_16.len() {
                INTERESTING_16[k - INTERESTING_8.len()] as i32
            } else {
                INTERESTING_32[k - INTERESTING_8.len() - INTERESTING_16.len()]
            };
            write_word(&mut region.buf, pos, v as u32, 4, rng.gen());
        }
        BlockDelete => {
            let n = block_len(rng, len);
            let pos = rng.gen_range(0..=len - n);
            region.delete(pos, n);
        }
        BlockInsert => {
            let n = block_len(rng, region.room());
            let pos = rng.gen_range(0..=len);
            let block: Vec<u8> = if rng.gen::<bool>() {
                (0..n).map(|_| rng.gen()).collect()
            } else {
                vec![rng.gen(); n]
            };
            region.insert(rng, pos, &block);
        }
        BlockDuplicate => {
            let n = block_len(rng, len.min(region.room()));
            let src = rng.gen_range(0..=len - n);
            let block = region.buf[src..src + n].to_vec();
            let pos = rng.gen_range(0..=len);
            region.insert(rng, pos, &block);
        }
        SpliceWithCorpusMember => {
            let donor = corpus.splice_input(rng.gen_range(0..corpus.splice_len()));
            let donor = donor_bytes(phase, donor);
            if donor.is_empty() {
                return false;
            }
            let overwrite = len >= 1 && (region.room() == 0 || rng.gen::<bool>());
            let limit = if overwrite { len } else { region.room() };
            let n = block_len(rng, donor.len().min(limit));
            let from = rng.gen_range(0..=donor.len() - n);
            let chunk = &donor[from..from + n];
            if overwrite {
                let pos = rng.gen_range(0..=len - n);
                region.buf[pos..pos + n].copy_from_slice(chunk);
            } else {
                let pos = rng.gen_range(0..=len);
                region.insert(rng, pos, chunk);
            }
        }
    }
    true
}

/// Mutates `base` with a stack of 1 to 16 havoc operations restricted to the
/// bytes `phase` permits, using the default part limit.
pub fn mutate<R: Rng + ?Sized, C: SpliceSource + ?Sized>(
    base: &HyperInput,
    phase: MutationPhase,
    rng: &mut R,
    corpus: &C,
) -> HyperInput {
    mutate_with_limit(base, phase, rng, corpus, MAX_PART_LEN)
}

pub fn mutate_with_limit<R: Rng + ?Sized, C: SpliceSource + ?Sized>(
    base: &HyperInput,
    phase: MutationPhase,
    rng: &mut R,
    corpus: &C,
    max_part_len: usize,
) -> HyperInput {
    let mut region = match phase {
        MutationPhase::PublicOnly => Region {
            buf: base.public.clone(),
            split: None,
            max_len: max_part_len,
        },
        MutationPhase::SecretOnly => Region {
            buf: base.secret.clone(),
            split: None,
            max_len: max_part_len,
        },
        MutationPhase::Whole => Region {
            buf: [base.public.as_slice(), base.secret.as_slice()].concat(),
            split: Some(base.public.len()),
            max_len: max_part_len.saturating_mul(2),
        },
    };
    let can_splice = corpus.splice_len() > 0;

    let stack = 1usize << rng.gen_range(0..=HAVOC_MAX_STACK_POW2);
    let mut kinds = Vec::with_capacity(MutatorKind::ALL.len());
    for _ in 0..stack {
        let len = region.buf.len();
        let room = region.room();
        kinds.clear();
        kinds.extend(
            MutatorKind::ALL
                .iter()
                .copied()
                .filter(|&k| applicable(k, len, room, can_splice)),
        );
        if kinds.is_empty() {
            break;
        }
        let kind = kinds[rng.gen_range(0..kinds.len())];
        apply(kind, &mut region, rng, phase, corpus);
    }

    match phase {
        MutationPhase::PublicOnly => HyperInput {
            public: region.buf,
            secret: base.secret.clone(),
        },
        MutationPhase::SecretOnly => HyperInput {
            public: base.public.clone(),
            secret: region.buf,
        },
        MutationPhase::Whole => {
            let split = region.split.unwrap_or(0).min(region.buf.len());
            let mut secret = region.buf.split_off(split);
            let mut public = region.buf;
            public.truncate(max_part_len);
            secret.truncate(max_part_len);
            HyperInput { public, secret }
        }
    }
}
