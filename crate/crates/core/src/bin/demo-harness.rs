// SPDX-License-Identifier: Apache-2.0

//! Minimal external harness: echoes the public part followed by one byte
//! telling whether the first secret byte exceeds 2. A public part of `crash`
//! exits with status 3; `fill?` reports whether pre-fill is enabled instead.

use std::io::{self, Write};
use std::process::ExitCode;

use hyperfuzz::harness::{fill_enabled, read_input, HarnessCoverage};

fn main() -> ExitCode {
    let mut cov = HarnessCoverage::from_env();
    let Ok(input) = read_input() else {
        return ExitCode::SUCCESS;
    };
    cov.hit(1);
    if input.public == b"crash" {
        cov.hit(2);
        return ExitCode::from(3);
    }
    let mut out = input.public.clone();
    if input.public == b"fill?" {
        cov.hit(3);
        out.push(fill_enabled() as u8);
    } else {
        let large = input.secret.first().copied().unwrap_or(0) > 2;
        cov.hit(if large { 4 } else { 5 });
        out.push(large as u8);
    }
    let _ = io::stdout().lock().write_all(&out);
    ExitCode::SUCCESS
}
