// SPDX-License-Identifier: Apache-2.0

//! Command implementations behind the `hyperfuzz` binary.
//!
//! Each command returns a report with an `exit_code()`; the binary only
//! parses arguments and prints.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use hyperfuzz::campaign::{Campaign, CampaignError, CampaignOutcome};
use hyperfuzz::executor::{ArenaConfig, Executor, ExecutorError, TargetSpec};
use hyperfuzz::hash::fingerprint;
use hyperfuzz::oracle::{
    self_composition_oracle, LeakTable, LeakTableConfig, OracleCounters, OracleError,
};
use hyperfuzz::report::read_report;
use hyperfuzz::{CampaignConfig, HyperInput};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Target(#[from] ExecutorError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("bad domain {0:?}: expected comma-separated items of `empty`, `N`, `A..B` or `x:HEX`")]
    Domain(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_USAGE
    }
}

pub fn cmd_fuzz(config: CampaignConfig) -> Result<CampaignOutcome, CliError> {
    let campaign = Campaign::new(config)?;
    let stop = campaign.stop_flag();
    // A second campaign in the same process keeps the first handler.
    let _ = ctrlc::set_handler(move || stop.store(true, std::sync::atomic::Ordering::Relaxed));
    Ok(campaign.run()?)
}

/// Shared knobs for commands that execute a target directly.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub flaky_reruns: u32,
    pub mem_fill: bool,
    pub timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            flaky_reruns: hyperfuzz::oracle::DEFAULT_FLAKY_RERUNS,
            mem_fill: true,
            timeout: hyperfuzz::executor::DEFAULT_TIMEOUT,
        }
    }
}

impl RunOptions {
    fn executor(&self, target: &TargetSpec) -> Result<Box<dyn Executor>, ExecutorError> {
        target.build(
            ArenaConfig {
                fill_enabled: self.mem_fill,
                ..ArenaConfig::default()
            },
            self.timeout,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayVerdict {
    /// Both executions were stable and their outputs differ.
    Leak,
    Malformed(String),
    IdenticalSecrets,
    Unstable {
        which: char,
    },
    Failed {
        which: char,
    },
    SameOutput,
}

impl fmt::Display for ReplayVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayVerdict::Leak => write!(f, "ok: stable, outputs differ"),
            ReplayVerdict::Malformed(e) => write!(f, "malformed record: {e}"),
            ReplayVerdict::IdenticalSecrets => write!(f, "secretA equals secretB"),
            ReplayVerdict::Unstable { which } => write!(f, "output of secret{which} is unstable"),
            ReplayVerdict::Failed { which } => write!(f, "secret{which} crashed or timed out"),
            ReplayVerdict::SameOutput => write!(f, "outputs are identical"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecordReplay {
    /// 1-based line number among non-blank lines.
    pub record: usize,
    pub verdict: ReplayVerdict,
    /// Recorded output hashes disagree with what the target produced now.
    pub hash_mismatch: bool,
    pub runs: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayReport {
    pub records: Vec<RecordReplay>,
}

impl ReplayReport {
    pub fn all_leak(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.verdict == ReplayVerdict::Leak)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_leak() {
            EXIT_OK
        } else {
            EXIT_FAIL
        }
    }
}

/// Runs `input` `n` times; returns the output if every run agreed.
fn stable_output(
    exec: &mut dyn Executor,
    input: &HyperInput,
    n: u32,
    which: char,
) -> Result<Vec<u8>, ReplayVerdict> {
    let first = exec.rerun(input).ok_or(ReplayVerdict::Failed { which })?;
    for _ in 1..n {
        match exec.rerun(input) {
            Some(out) if out == first => {}
            Some(_) => return Err(ReplayVerdict::Unstable { which }),
            None => return Err(ReplayVerdict::Failed { which }),
        }
    }
    Ok(first)
}

pub fn cmd_replay(
    report: &Path,
    target: &TargetSpec,
    opts: RunOptions,
) -> Result<ReplayReport, CliError> {
    let records = read_report(report).map_err(|source| CliError::Io {
        path: report.to_path_buf(),
        source,
    })?;
    let mut exec = opts.executor(target)?;
    let mut out = ReplayReport::default();
    for (i, rec) in records.into_iter().enumerate() {
        let line = i + 1;
        let before = exec.runs();
        let h = match rec.and_then(|r| r.hypertest(line)) {
            Ok(h) => h,
            Err(e) => {
                out.records.push(RecordReplay {
                    record: line,
                    verdict: ReplayVerdict::Malformed(e.to_string()),
                    hash_mismatch: false,
                    runs: 0,
                });
                continue;
            }
        };
        let mut hash_mismatch = false;
        let verdict = if h.secret_a == h.secret_b {
            ReplayVerdict::IdenticalSecrets
        } else {
            let n = opts.flaky_reruns;
            let outputs = stable_output(exec.as_mut(), &h.input_a(), n, 'A')
                .and_then(|a| stable_output(exec.as_mut(), &h.input_b(), n, 'B').map(|b| (a, b)));
            match outputs {
                Err(v) => v,
                Ok((a, b)) => {
                    hash_mismatch =
                        fingerprint(&a) != h.output_hash_a || fingerprint(&b) != h.output_hash_b;
                    if a == b {
                        ReplayVerdict::SameOutput
                    } else {
                        ReplayVerdict::Leak
                    }
                }
            }
        };
        out.records.push(RecordReplay {
            record: line,
            verdict,
            hash_mismatch,
            runs: exec.runs() - before,
        });
    }
    Ok(out)
}

/// Parses a byte-sequence domain such as `0..255`, `empty,x:aabb` or `1,2,3`.
pub fn parse_domain(s: &str) -> Result<Vec<Vec<u8>>, CliError> {
    let bad = || CliError::Domain(s.to_string());
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim) {
        if item == "empty" {
            out.push(Vec::new());
        } else if let Some(h) = item.strip_prefix("x:") {
            out.push(hex::decode(h).map_err(|_| bad())?);
        } else if let Some((a, b)) = item.split_once("..") {
            let a: u8 = a.parse().map_err(|_| bad())?;
            let b: u8 = b.parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend((a..=b).map(|v| vec![v]));
        } else {
            out.push(vec![item.parse::<u8>().map_err(|_| bad())?]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyAgreement {
    pub public: Vec<u8>,
    pub oracle_violations: u64,
    pub sweep_leak: bool,
}

impl KeyAgreement {
    pub fn agrees(&self) -> bool {
        (self.oracle_violations > 0) == self.sweep_leak
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub pairs_checked: u64,
    pub violations: u64,
    pub oracle_evaluations: u64,
    /// Points dropped from the oracle because a second run disagreed.
    pub nondeterministic_points: u64,
    pub sweep: OracleCounters,
    pub keys: Vec<KeyAgreement>,
}

impl CheckReport {
    pub fn agrees(&self) -> bool {
        self.keys.iter().all(KeyAgreement::agrees)
    }

    pub fn leak_found(&self) -> bool {
        self.violations > 0
    }

    pub fn exit_code(&self) -> i32 {
        if self.agrees() {
            EXIT_OK
        } else {
            EXIT_FAIL
        }
    }
}

/// Runs the pairwise oracle and an observation sweep (every point fed to a
/// fresh [`LeakTable`] in order) and compares their per-key verdicts.
pub fn cmd_check_exhaustive(
    target: &TargetSpec,
    public_domain: &[Vec<u8>],
    secret_domain: &[Vec<u8>],
    opts: RunOptions,
) -> Result<CheckReport, CliError> {
    let mut oracle_exec = opts.executor(target)?;
    let mut oracle_run = |i: &HyperInput| oracle_exec.rerun(i);
    let mut sc = self_composition_oracle(&mut oracle_run, public_domain, secret_domain)?;
    let oracle_evaluations = sc.evaluations();
    let nondeterministic_points = sc.retain_deterministic(&mut oracle_run);

    let mut sweep_exec = opts.executor(target)?;
    let mut table = LeakTable::new(LeakTableConfig {
        flaky_reruns: opts.flaky_reruns,
        ..LeakTableConfig::default()
    });
    for p in public_domain {
        for s in secret_domain {
            let input = HyperInput::new(p.clone(), s.clone());
            let Some(out) = sweep_exec.rerun(&input) else {
                continue;
            };
            table.observe(&input, &out, &mut |i: &HyperInput| sweep_exec.rerun(i));
        }
    }

    let keys = sc
        .per_public()
        .iter()
        .map(|v| KeyAgreement {
            public: v.public.clone(),
            oracle_violations: v.violations,
            sweep_leak: table.entry(&v.public).is_some_and(|e| e.suspected()),
        })
        .collect();
    Ok(CheckReport {
        pairs_checked: sc.pairs_checked(),
        violations: sc.violation_count(),
        oracle_evaluations,
        nondeterministic_points,
        sweep: *table.counters(),
        keys,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domains() {
        assert_eq!(
            parse_domain("0..3").unwrap(),
            vec![vec![0], vec![1], vec![2], vec![3]]
        );
        assert_eq!(parse_domain("empty").unwrap(), vec![Vec::<u8>::new()]);
        assert_eq!(
            parse_domain("7, x:aabb").unwrap(),
            vec![vec![7], vec![0xAA, 0xBB]]
        );
        assert_eq!(parse_domain("0..255").unwrap().len(), 256);
        assert!(parse_domain("3..1").is_err());
        assert!(parse_domain("256").is_err());
        assert!(parse_domain("").is_err());
    }
}
