// SPDX-License-Identifier: Apache-2.0

//! Structured inputs, security labels and the length-prefixed wire format.
//!
//! Every boundary (external harness stdin, queue files, replay files) carries
//! a [`HyperInput`] as
//!
//! ```text
//! [public len: u32 LE][secret len: u32 LE][public bytes][secret bytes]
//! ```
//!
//! [`decode`] is total: short headers are zero-padded, declared lengths are
//! clamped to what is actually present (public first) and trailing bytes are
//! dropped.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default upper bound on the length of either input part (1 MiB).
pub const MAX_PART_LEN: usize = 1 << 20;

const HEADER_LEN: usize = 8;

/// Two-point High/Low lattice. `Low < High`; information may only flow upwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SecurityLabel {
    Low,
    High,
}

impl SecurityLabel {
    /// `true` if data labelled `self` may flow into a sink labelled `to`.
    pub fn flows_to(self, to: SecurityLabel) -> bool {
        self <= to
    }
}

/// A fuzzer-generated test input with separately tracked public (Low) and
/// secret (High) parts.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct HyperInput {
    pub public: Vec<u8>,
    pub secret: Vec<u8>,
}

impl HyperInput {
    pub fn new(public: impl Into<Vec<u8>>, secret: impl Into<Vec<u8>>) -> Self {
        Self {
            public: public.into(),
            secret: secret.into(),
        }
    }

    pub fn part(&self, label: SecurityLabel) -> &[u8] {
        match label {
            SecurityLabel::Low => &self.public,
            SecurityLabel::High => &self.secret,
        }
    }

    pub fn part_mut(&mut self, label: SecurityLabel) -> &mut Vec<u8> {
        match label {
            SecurityLabel::Low => &mut self.public,
            SecurityLabel::High => &mut self.secret,
        }
    }

    /// Length of the encoded form.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.public.len() + self.secret.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        encode(self)
    }

    pub fn within_limit(&self, max_part_len: usize) -> bool {
        self.public.len() <= max_part_len && self.secret.len() <= max_part_len
    }
}

impl fmt::Debug for HyperInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HyperInput")
            .field("public", &hex::encode(&self.public))
            .field("secret", &hex::encode(&self.secret))
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{label:?} part is {len} bytes, limit is {limit}")]
    PartTooLong {
        label: SecurityLabel,
        len: usize,
        limit: usize,
    },
}

/// Encodes with the default [`MAX_PART_LEN`] limit.
pub fn encode(input: &HyperInput) -> Result<Vec<u8>, EncodeError> {
    encode_with_limit(input, MAX_PART_LEN)
}

pub fn encode_with_limit(input: &HyperInput, limit: usize) -> Result<Vec<u8>, EncodeError> {
    // The u32 prefix caps any configured limit.
    let limit = limit.min(u32::MAX as usize);
    for label in [SecurityLabel::Low, SecurityLabel::High] {
        let len = input.part(label).len();
        if len > limit {
            return Err(EncodeError::PartTooLong { label, len, limit });
        }
    }
    let mut out = Vec::with_capacity(input.encoded_len());
    out.extend_from_slice(&(input.public.len() as u32).to_le_bytes());
    out.extend_from_slice(&(input.secret.len() as u32).to_le_bytes());
    out.extend_from_slice(&input.public);
    out.extend_from_slice(&input.secret);
    Ok(out)
}

/// Decodes arbitrary bytes into a [`HyperInput`]. Never fails.
pub fn decode(raw: &[u8]) -> HyperInput {
    let mut header = [0u8; HEADER_LEN];
    let present = raw.len().min(HEADER_LEN);
    header[..present].copy_from_slice(&raw[..present]);
    let public_len = u32::from_le_bytes([header[0], header[1], header[2], header[3]]) as usize;
    let secret_len = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as usize;

    let body = &raw[present..];
    let public_len = public_len.min(body.len());
    let (public, rest) = body.split_at(public_len);
    let secret_len = secret_len.min(rest.len());
    HyperInput {
        public: public.to_vec(),
        secret: rest[..secret_len].to_vec(),
    }
}

/// A leak witness: equal public inputs, two secrets, two distinct outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypertest {
    pub public: Vec<u8>,
    pub secret_a: Vec<u8>,
    pub secret_b: Vec<u8>,
    pub output_hash_a: crate::Hash64,
    pub output_hash_b: crate::Hash64,
}

impl Hypertest {
    pub fn input_a(&self) -> HyperInput {
        HyperInput::new(self.public.clone(), self.secret_a.clone())
    }

    pub fn input_b(&self) -> HyperInput {
        HyperInput::new(self.public.clone(), self.secret_b.clone())
    }

    /// Checks the structural invariants that do not need the target.
    pub fn is_well_formed(&self) -> bool {
        self.output_hash_a != self.output_hash_b && self.secret_a != self.secret_b
    }
}
