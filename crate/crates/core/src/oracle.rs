// SPDX-License-Identifier: Apache-2.0

//! Leak detection over a stream of single executions.
//!
//! Executions are grouped by the hash of their public input. Within a group
//! only output hashes are kept, so each generated input runs exactly once in
//! the main loop; a target rerun happens only when an output is new for a
//! known public input, to rule out nondeterminism before a pair of secrets is
//! reported. [`self_composition_oracle`] is the brute-force reference that
//! compares every pair of secrets directly.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::hash::{fingerprint, Hash64};
use crate::model::{HyperInput, Hypertest};

pub const DEFAULT_FLAKY_RERUNS: u32 = 100;
/// Recorded (secret hash, output hash) pairs kept per public key.
pub const MAX_HASH_PAIRS_PER_KEY: usize = 64;
/// Full secrets kept per public key.
pub const MAX_FULL_SECRETS_PER_KEY: usize = 16;
pub const DEFAULT_ENTRY_BUDGET: usize = 1 << 24;

/// Runs `input` again, returning `None` if the target crashed or timed out.
pub trait Rerun {
    fn rerun(&mut self, input: &HyperInput) -> Option<Vec<u8>>;
}

impl<F: FnMut(&HyperInput) -> Option<Vec<u8>> + ?Sized> Rerun for F {
    fn rerun(&mut self, input: &HyperInput) -> Option<Vec<u8>> {
        self(input)
    }
}

/// Reruns `input` up to `n` times, stopping at the first output that is not
/// byte-identical to `expected`. A failed rerun counts as a mismatch.
pub fn flakiness_check<R: Rerun + ?Sized>(
    input: &HyperInput,
    expected: &[u8],
    rerun: &mut R,
    n: u32,
) -> bool {
    (0..n).all(|_| rerun.rerun(input).as_deref() == Some(expected))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetainedSecret {
    pub secret: Vec<u8>,
    pub output_hash: Hash64,
    /// Whether this secret has passed a flakiness check.
    pub verified: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ObservationEntry {
    pub secret_input_hashes: SmallVec<[Hash64; 1]>,
    pub public_output_hashes: SmallVec<[Hash64; 1]>,
    pub secret_inputs_full: SmallVec<[RetainedSecret; 1]>,
    last_touch: u64,
    suspected: bool,
}

impl ObservationEntry {
    /// Some observation under this key passed the filter with a novel output.
    pub fn suspected(&self) -> bool {
        self.suspected
    }

    fn record(&mut self, secret_hash: Hash64, output_hash: Hash64) {
        if self.public_output_hashes.len() == MAX_HASH_PAIRS_PER_KEY {
            self.secret_input_hashes.remove(0);
            self.public_output_hashes.remove(0);
        }
        self.secret_input_hashes.push(secret_hash);
        self.public_output_hashes.push(output_hash);
    }

    fn retain(&mut self, secret: RetainedSecret) {
        if self.secret_inputs_full.len() == MAX_FULL_SECRETS_PER_KEY {
            self.secret_inputs_full.remove(0);
        }
        self.secret_inputs_full.push(secret);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    NewPublicKey,
    KnownOutput,
    FlakyDiscarded,
    SuspectedLeak,
    LeakConfirmed(Hypertest),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounters {
    pub observations: u64,
    pub new_public_keys: u64,
    pub known_outputs: u64,
    pub suspected_leaks: u64,
    pub flaky_discards: u64,
    pub confirmed: u64,
    pub flaky_checks_passed: u64,
    pub flaky_checks_failed: u64,
    /// Every rerun made by a flakiness check.
    pub flaky_reruns: u64,
    /// The subset of `flaky_reruns` made by checks that failed.
    pub failed_check_reruns: u64,
    /// Checks run on a key's first retained secret before it is reported.
    pub first_secret_checks: u64,
    pub evicted_keys: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakTableConfig {
    pub flaky_reruns: u32,
    pub entry_budget: usize,
}

impl Default for LeakTableConfig {
    fn default() -> Self {
        Self {
            flaky_reruns: DEFAULT_FLAKY_RERUNS,
            entry_budget: DEFAULT_ENTRY_BUDGET,
        }
    }
}

/// Deduplication key of a reported hypertest: public hash plus the
/// unordered pair of output hashes.
pub type ReportKey = (Hash64, Hash64, Hash64);

pub fn report_key(h: &Hypertest) -> ReportKey {
    let (lo, hi) = if h.output_hash_a <= h.output_hash_b {
        (h.output_hash_a, h.output_hash_b)
    } else {
        (h.output_hash_b, h.output_hash_a)
    };
    (fingerprint(&h.public), lo, hi)
}

#[derive(Debug)]
pub struct LeakTable {
    entries: HashMap<Hash64, ObservationEntry>,
    confirmed: Vec<Hypertest>,
    reported: HashSet<ReportKey>,
    counters: OracleCounters,
    config: LeakTableConfig,
    clock: u64,
}

impl Default for LeakTable {
    fn default() -> Self {
        Self::new(LeakTableConfig::default())
    }
}

/// Runs one flakiness check and books it.
fn checked<R: Rerun + ?Sized>(
    counters: &mut OracleCounters,
    n: u32,
    rerun: &mut R,
    check: impl FnOnce(&mut dyn FnMut(&HyperInput) -> Option<Vec<u8>>, u32) -> bool,
) -> bool {
    let mut reruns = 0u64;
    let ok = check(
        &mut |input: &HyperInput| {
            reruns += 1;
            rerun.rerun(input)
        },
        n,
    );
    counters.flaky_reruns += reruns;
    if ok {
        counters.flaky_checks_passed += 1;
    } else {
        counters.flaky_checks_failed += 1;
        counters.failed_check_reruns += reruns;
        counters.flaky_discards += 1;
    }
    ok
}

impl LeakTable {
    pub fn new(config: LeakTableConfig) -> Self {
        assert!(config.flaky_reruns >= 1, "flaky_reruns must be at least 1");
        Self {
            entries: HashMap::new(),
            confirmed: Vec::new(),
            reported: HashSet::new(),
            counters: OracleCounters::default(),
            config,
            clock: 0,
        }
    }

    pub fn config(&self) -> &LeakTableConfig {
        &self.config
    }

    pub fn counters(&self) -> &OracleCounters {
        &self.counters
    }

    pub fn confirmed_hypertests(&self) -> &[Hypertest] {
        &self.confirmed
    }

    pub fn unique_public_keys(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, public: &[u8]) -> Option<&ObservationEntry> {
        self.entries.get(&fingerprint(public))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Hash64, &ObservationEntry)> {
        self.entries.iter()
    }

    /// Feeds one main-loop execution of `input` that produced `output`.
    pub fn observe<R: Rerun + ?Sized>(
        &mut self,
        input: &HyperInput,
        output: &[u8],
        rerun: &mut R,
    ) -> Verdict {
        self.counters.observations += 1;
        self.clock += 1;
        let public_hash = fingerprint(&input.public);
        let secret_hash = fingerprint(&input.secret);
        let output_hash = fingerprint(output);
        let n = self.config.flaky_reruns;
        let counters = &mut self.counters;

        let Some(entry) = self.entries.get_mut(&public_hash) else {
            // Most keys only ever see one observation, which is stored inline.
            let mut entry = ObservationEntry {
                last_touch: self.clock,
                ..Default::default()
            };
            entry.record(secret_hash, output_hash);
            entry.retain(RetainedSecret {
                secret: input.secret.clone(),
                output_hash,
                verified: false,
            });
            self.entries.insert(public_hash, entry);
            counters.new_public_keys += 1;
            self.maybe_evict();
            return Verdict::NewPublicKey;
        };
        entry.last_touch = self.clock;

        if entry.public_output_hashes.contains(&output_hash) {
            counters.known_outputs += 1;
            return Verdict::KnownOutput;
        }

        if !checked(counters, n, rerun, |r, n| {
            flakiness_check(input, output, r, n)
        }) {
            return Verdict::FlakyDiscarded;
        }
        counters.suspected_leaks += 1;
        entry.suspected = true;
        entry.record(secret_hash, output_hash);
        entry.retain(RetainedSecret {
            secret: input.secret.clone(),
            output_hash,
            verified: true,
        });

        let len = entry.secret_inputs_full.len();
        if len < 2 {
            return Verdict::SuspectedLeak;
        }
        let older = &entry.secret_inputs_full[len - 2];
        if !older.verified {
            // The first secret of a key was retained without a check; check it
            // now against its recorded output hash.
            counters.first_secret_checks += 1;
            let older_input = HyperInput::new(input.public.clone(), older.secret.clone());
            let older_hash = older.output_hash;
            let ok = checked(counters, n, rerun, |r, n| {
                let Some(reference) = r(&older_input) else {
                    return false;
                };
                fingerprint(&reference) == older_hash
                    && flakiness_check(&older_input, &reference, r, n - 1)
            });
            if !ok {
                entry.secret_inputs_full.remove(len - 2);
                return Verdict::SuspectedLeak;
            }
            entry.secret_inputs_full[len - 2].verified = true;
        }

        let older = &entry.secret_inputs_full[len - 2];
        let newer = &entry.secret_inputs_full[len - 1];
        if older.secret == newer.secret {
            return Verdict::SuspectedLeak;
        }
        let hypertest = Hypertest {
            public: input.public.clone(),
            secret_a: older.secret.clone(),
            secret_b: newer.secret.clone(),
            output_hash_a: older.output_hash,
            output_hash_b: newer.output_hash,
        };
        if !self.reported.insert(report_key(&hypertest)) {
            return Verdict::SuspectedLeak;
        }
        counters.confirmed += 1;
        self.confirmed.push(hypertest.clone());
        Verdict::LeakConfirmed(hypertest)
    }

    /// Drops least-recently-touched keys with no suspected leak once the
    /// table is over budget, down to 7/8 of the budget.
    fn maybe_evict(&mut self) {
        let budget = self.config.entry_budget.max(1);
        if self.entries.len() <= budget {
            return;
        }
        let target = budget - budget / 8;
        let excess = self.entries.len().saturating_sub(target);
        let mut candidates: Vec<(u64, Hash64)> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.suspected)
            .map(|(k, e)| (e.last_touch, *k))
            .collect();
        let excess = excess.min(candidates.len());
        if excess == 0 {
            return;
        }
        if excess < candidates.len() {
            candidates.select_nth_unstable(excess);
        }
        for (_, key) in &candidates[..excess] {
            self.entries.remove(key);
        }
        self.counters.evicted_keys += excess as u64;
    }
}

/// Upper bound on `|public domain| * C(|secret domain|, 2)`.
pub const MAX_PAIR_EVALUATIONS: u64 = 1 << 24;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("domain needs {pairs} pair comparisons, limit is {limit}")]
    DomainTooLarge { pairs: u128, limit: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PublicVerdict {
    pub public: Vec<u8>,
    pub pairs_checked: u64,
    pub violations: u64,
}

/// Memoized outputs of every (public, secret) point plus the pairwise result.
#[derive(Debug, Clone)]
pub struct SelfComposition {
    secrets: Vec<Vec<u8>>,
    // outputs[p][s]; `None` for crashed or excluded points.
    outputs: Vec<Vec<Option<Vec<u8>>>>,
    per_public: Vec<PublicVerdict>,
    evaluations: u64,
}

pub fn pair_count(publics: usize, secrets: usize) -> u128 {
    let s = secrets as u128;
    publics as u128 * (s * s.saturating_sub(1) / 2)
}

/// Evaluates `target` once on every point of `public_domain x secret_domain`
/// and compares every unordered pair of secrets under each public input.
/// Points whose run crashed take part in no pair.
pub fn self_composition_oracle<R: Rerun + ?Sized>(
    target: &mut R,
    public_domain: &[Vec<u8>],
    secret_domain: &[Vec<u8>],
) -> Result<SelfComposition, OracleError> {
    let pairs = pair_count(public_domain.len(), secret_domain.len());
    if pairs > MAX_PAIR_EVALUATIONS as u128 {
        return Err(OracleError::DomainTooLarge {
            pairs,
            limit: MAX_PAIR_EVALUATIONS,
        });
    }
    let mut evaluations = 0u64;
    let outputs = public_domain
        .iter()
        .map(|p| {
            secret_domain
                .iter()
                .map(|s| {
                    evaluations += 1;
                    target.rerun(&HyperInput::new(p.clone(), s.clone()))
                })
                .collect()
        })
        .collect();
    let mut sc = SelfComposition {
        secrets: secret_domain.to_vec(),
        outputs,
        per_public: public_domain
            .iter()
            .map(|p| PublicVerdict {
                public: p.clone(),
                pairs_checked: 0,
                violations: 0,
            })
            .collect(),
        evaluations,
    };
    sc.compare_pairs();
    Ok(sc)
}

impl SelfComposition {
    fn compare_pairs(&mut self) {
        for (verdict, row) in self.per_public.iter_mut().zip(&self.outputs) {
            verdict.pairs_checked = 0;
            verdict.violations = 0;
            for i in 0..row.len() {
                for j in i + 1..row.len() {
                    verdict.pairs_checked += 1;
                    if let (Some(a), Some(b)) = (&row[i], &row[j]) {
                        if a != b {
                            verdict.violations += 1;
                        }
                    }
                }
            }
        }
    }

    /// Target evaluations performed while building the table.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn per_public(&self) -> &[PublicVerdict] {
        &self.per_public
    }

    pub fn pairs_checked(&self) -> u64 {
        self.per_public.iter().map(|v| v.pairs_checked).sum()
    }

    pub fn violation_count(&self) -> u64 {
        self.per_public.iter().map(|v| v.violations).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.violation_count() == 0
    }

    /// Every violating `(public, secret_a, secret_b)` with `a` before `b` in the domain.
    pub fn violating_triples(&self) -> impl Iterator<Item = (&[u8], &[u8], &[u8])> + '_ {
        self.per_public
            .iter()
            .zip(&self.outputs)
            .filter(|(v, _)| v.violations > 0)
            .flat_map(move |(v, row)| {
                (0..row.len()).flat_map(move |i| {
                    (i + 1..row.len()).filter_map(move |j| match (&row[i], &row[j]) {
                        (Some(a), Some(b)) if a != b => Some((
                            v.public.as_slice(),
                            self.secrets[i].as_slice(),
                            self.secrets[j].as_slice(),
                        )),
                        _ => None,
                    })
                })
            })
    }

    /// Reruns every point twice back to back and excludes those whose output
    /// changed, then recomputes the pairwise result. Returns the number of
    /// excluded points. Two consecutive reruns catch counters whose period
    /// divides the size of the domain, which a single later pass would miss.
    pub fn retain_deterministic<R: Rerun + ?Sized>(&mut self, target: &mut R) -> u64 {
        let mut excluded = 0;
        for (verdict, row) in self.per_public.iter().zip(self.outputs.iter_mut()) {
            for (secret, out) in self.secrets.iter().zip(row.iter_mut()) {
                if out.is_none() {
                    continue;
                }
                let input = HyperInput::new(verdict.public.clone(), secret.clone());
                let first = target.rerun(&input);
                let second = target.rerun(&input);
                if first != *out || second != *out {
                    *out = None;
                    excluded += 1;
                }
            }
        }
        self.compare_pairs();
        excluded
    }
}
