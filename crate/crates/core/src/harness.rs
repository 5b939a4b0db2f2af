// SPDX-License-Identifier: Apache-2.0

//! Helpers for writing external harnesses in Rust.
//!
//! A harness reads its whole stdin, decodes it with [`read_input`], writes the
//! Low-observable output to stdout and exits 0. Edges may be reported through
//! [`HarnessCoverage`], which is a no-op when the fuzzer did not provide a map.

use std::io::{self, Read};

use crate::coverage::MAP_SIZE;
use crate::executor::shm::AttachedMap;
use crate::executor::{NO_FILL_ENV, SHM_ENV};
use crate::model::{decode, HyperInput};

pub fn read_input() -> io::Result<HyperInput> {
    let mut raw = Vec::new();
    io::stdin().lock().read_to_end(&mut raw)?;
    Ok(decode(&raw))
}

/// `false` when the fuzzer asked for memory pre-fill to be skipped.
pub fn fill_enabled() -> bool {
    std::env::var(NO_FILL_ENV).map(|v| v != "1").unwrap_or(true)
}

pub struct HarnessCoverage {
    map: Option<AttachedMap>,
}

impl HarnessCoverage {
    pub fn from_env() -> Self {
        let map = std::env::var(SHM_ENV)
            .ok()
            .and_then(|id| id.parse::<i32>().ok())
            .and_then(|id| AttachedMap::attach(id, MAP_SIZE).ok());
        Self { map }
    }

    pub fn is_instrumented(&self) -> bool {
        self.map.is_some()
    }

    pub fn hit(&mut self, edge: u32) {
        if let Some(map) = self.map.as_mut() {
            let c = &mut map.as_mut_slice()[edge as usize % MAP_SIZE];
            *c = c.saturating_add(1);
        }
    }
}
