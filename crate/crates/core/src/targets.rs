// SPDX-License-Identifier: Apache-2.0

//! Built-in desk-scale targets covering explicit, implicit and memory leaks,
//! plus noninterferent and nondeterministic controls.
//!
//! Missing input bytes read as zero everywhere.

use std::sync::atomic::{AtomicU8, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{CoverageHook, MemoryArena, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeakClass {
    ExplicitFlow,
    ImplicitFlow,
    MemoryPadding,
    MemoryOverRead,
    None,
    Flaky,
}

impl LeakClass {
    pub fn is_leak(self) -> bool {
        !matches!(self, LeakClass::None | LeakClass::Flaky)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    IsLarge,
    LeakyExample,
    TotalLeak,
    PasswordCheckToy,
    ParityImplicit,
    PaddingStruct,
    OverRead,
    ConstantSafe,
    SumSafe,
    FlakyCounter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinInfo {
    pub name: &'static str,
    pub leak_class: LeakClass,
    kind: Kind,
}

impl BuiltinInfo {
    pub fn expected_leak(&self) -> bool {
        self.leak_class.is_leak()
    }
}

const fn info(name: &'static str, leak_class: LeakClass, kind: Kind) -> BuiltinInfo {
    BuiltinInfo {
        name,
        leak_class,
        kind,
    }
}

pub static BUILTINS: &[BuiltinInfo] = &[
    info("isLarge", LeakClass::ExplicitFlow, Kind::IsLarge),
    info("leakyExample", LeakClass::ExplicitFlow, Kind::LeakyExample),
    info("totalLeak", LeakClass::ExplicitFlow, Kind::TotalLeak),
    info(
        "passwordCheckToy",
        LeakClass::ImplicitFlow,
        Kind::PasswordCheckToy,
    ),
    info(
        "parityImplicit",
        LeakClass::ImplicitFlow,
        Kind::ParityImplicit,
    ),
    info(
        "paddingStruct",
        LeakClass::MemoryPadding,
        Kind::PaddingStruct,
    ),
    info("overRead", LeakClass::MemoryOverRead, Kind::OverRead),
    info("constantSafe", LeakClass::None, Kind::ConstantSafe),
    info("sumSafe", LeakClass::None, Kind::SumSafe),
    info("flakyCounter", LeakClass::Flaky, Kind::FlakyCounter),
];

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown builtin target {0:?}")]
pub struct UnknownTarget(pub String);

pub fn lookup(name: &str) -> Result<&'static BuiltinInfo, UnknownTarget> {
    BUILTINS
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| UnknownTarget(name.to_string()))
}

pub fn builtin(name: &str) -> Result<BuiltinTarget, UnknownTarget> {
    lookup(name).map(|info| BuiltinTarget { info })
}

/// Runs the named builtin once, discarding coverage.
pub fn evaluate_builtin(
    name: &str,
    public: &[u8],
    secret: &[u8],
    arena: &mut MemoryArena,
) -> Result<Vec<u8>, UnknownTarget> {
    let target = builtin(name)?;
    let mut scratch = crate::coverage::CoverageMap::new();
    Ok(target.evaluate(public, secret, arena, &mut CoverageHook::new(&mut scratch)))
}

// Shared by every flakyCounter instance in the process.
static FLAKY_COUNTER: AtomicU8 = AtomicU8::new(0);

/// Where `paddingStruct` lays out its struct.
const STRUCT_OFFSET: usize = 0;
/// Start and capacity of the `overRead` buffer.
const BUF_OFFSET: usize = 256;
const BUF_LEN: usize = 16;

#[derive(Debug, Clone, Copy)]
pub struct BuiltinTarget {
    info: &'static BuiltinInfo,
}

fn byte(bytes: &[u8], i: usize) -> u8 {
    bytes.get(i).copied().unwrap_or(0)
}

impl BuiltinTarget {
    pub fn info(&self) -> &'static BuiltinInfo {
        self.info
    }

    pub fn evaluate(
        &self,
        public: &[u8],
        secret: &[u8],
        arena: &mut MemoryArena,
        cov: &mut CoverageHook<'_>,
    ) -> Vec<u8> {
        cov.hit(0);
        match self.info.kind {
            Kind::IsLarge => {
                if byte(secret, 0) > 2 {
                    cov.hit(1);
                    vec![1]
                } else {
                    cov.hit(2);
                    vec![0]
                }
            }
            Kind::LeakyExample => {
                let p = byte(public, 0);
                if byte(secret, 0) > 2 {
                    cov.hit(1);
                    vec![p.wrapping_add(1)]
                } else {
                    cov.hit(2);
                    vec![p]
                }
            }
            Kind::TotalLeak => {
                for _ in secret {
                    cov.hit(1);
                }
                secret.to_vec()
            }
            Kind::PasswordCheckToy => {
                if public.len() != secret.len() {
                    cov.hit(1);
                    return vec![0];
                }
                for (i, (a, b)) in public.iter().zip(secret).enumerate() {
                    if a != b {
                        cov.hit(2 + (i as u32 % 8));
                        return vec![0];
                    }
                }
                cov.hit(10);
                vec![1]
            }
            Kind::ParityImplicit => {
                // Output is chosen by control flow; no arithmetic on the secret reaches it.
                if byte(secret, 0) % 2 == 1 {
                    cov.hit(1);
                    vec![1]
                } else {
                    cov.hit(2);
                    vec![0]
                }
            }
            Kind::PaddingStruct => {
                // struct { u8 direction; /* 3 bytes padding */ u32 distance; }
                if public.len() >= 5 {
                    cov.hit(1);
                } else {
                    cov.hit(2);
                }
                let distance = [
                    byte(public, 1),
                    byte(public, 2),
                    byte(public, 3),
                    byte(public, 4),
                ];
                arena.write(STRUCT_OFFSET, &[byte(public, 0)]);
                arena.write(STRUCT_OFFSET + 4, &distance);
                arena.read(STRUCT_OFFSET, 8)
            }
            Kind::OverRead => {
                let payload = public.get(1..).unwrap_or(&[]);
                let payload = &payload[..payload.len().min(BUF_LEN)];
                arena.write(BUF_OFFSET, payload);
                let requested = (byte(public, 0) as usize).min(BUF_LEN);
                if requested > payload.len() {
                    cov.hit(1);
                } else {
                    cov.hit(2);
                }
                arena.read(BUF_OFFSET, requested)
            }
            Kind::ConstantSafe => vec![0],
            Kind::SumSafe => {
                let mut sum = 0u8;
                for &b in public {
                    cov.hit(1);
                    sum = sum.wrapping_add(b);
                }
                vec![sum]
            }
            Kind::FlakyCounter => vec![FLAKY_COUNTER.fetch_add(1, Ordering::Relaxed)],
        }
    }
}

impl Target for BuiltinTarget {
    fn name(&self) -> &str {
        self.info.name
    }

    fn run(
        &mut self,
        public: &[u8],
        secret: &[u8],
        arena: &mut MemoryArena,
        coverage: &mut CoverageHook<'_>,
    ) -> Vec<u8> {
        self.evaluate(public, secret, arena, coverage)
    }
}
