// SPDX-License-Identifier: Apache-2.0

use hyperfuzz::hash64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twox_hash::XxHash64;

#[test]
fn random_cases_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0;
    for case in 0..2000 {
        // cover every tail length and both sides of the 32-byte stripe
        let len = match case % 4 {
            0 => rng.gen_range(0..32),
            1 => rng.gen_range(32..64),
            2 => rng.gen_range(64..1024),
            _ => rng.gen_range(0..8192),
        };
        let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let seed: u64 = if case % 5 == 0 { 0 } else { rng.gen() };
        if hash64(&data, seed).0 != XxHash64::oneshot(seed, &data) {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn every_short_length() {
    let data: Vec<u8> = (0..=255u8).collect();
    for n in 0..=data.len() {
        assert_eq!(
            hash64(&data[..n], 99).0,
            XxHash64::oneshot(99, &data[..n]),
            "len {n}"
        );
    }
}
