// SPDX-License-Identifier: Apache-2.0

//! The fuzzing loop.
//!
//! Seeds run first and are always queued. Afterwards queue entries are
//! scheduled round-robin, favored entries first, each producing a batch of
//! havoc children. Every child runs once; its coverage decides whether it is
//! queued and its output goes to the [`LeakTable`].
//!
//! Output directory layout:
//!
//! ```text
//! queue/<execIndex>-<coverageDigest>   encoded inputs
//! crashes/<execIndex>-<kind>-<hash>    crashing or timed-out inputs
//! hypertests.jsonl                     confirmed leaks
//! stats.jsonl                          a CampaignStats line every 5 s
//! fuzzer_setup.json                    the configuration
//! ```

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{is_interesting, GlobalCoverage, MAP_SIZE};
use crate::executor::{ArenaConfig, ExecStatus, Executor, ExecutorError, TargetSpec};
use crate::hash::{fingerprint, Hash64};
use crate::model::{decode, encode, HyperInput, MAX_PART_LEN};
use crate::mutate::{choose_phase, mutate_with_limit, PhaseWeights, SpliceSource};
use crate::oracle::{LeakTable, LeakTableConfig, OracleCounters, Verdict, DEFAULT_ENTRY_BUDGET};
use crate::report::{HypertestRecord, ReportSink};

pub const STATS_INTERVAL: Duration = Duration::from_secs(5);
/// Children generated per scheduled queue entry.
pub const HAVOC_ROUNDS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub wall_seconds: Option<f64>,
    pub max_execs: Option<u64>,
}

impl Budget {
    pub fn execs(n: u64) -> Self {
        Self {
            wall_seconds: None,
            max_execs: Some(n),
        }
    }

    pub fn seconds(s: f64) -> Self {
        Self {
            wall_seconds: Some(s),
            max_execs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub target: TargetSpec,
    pub out_dir: Option<PathBuf>,
    pub seed_dir: Option<PathBuf>,
    /// Seeds supplied directly, run after those from `seed_dir`.
    #[serde(skip)]
    pub seeds: Vec<HyperInput>,
    pub rng_seed: u64,
    pub budget: Budget,
    pub flaky_reruns: u32,
    pub mem_fill: bool,
    pub phase_weights: PhaseWeights,
    pub timeout_ms: u64,
    /// End the campaign at the first confirmed hypertest.
    pub stop_on_leak: bool,
    pub entry_budget: usize,
    pub max_part_len: usize,
}

impl CampaignConfig {
    pub fn new(target: TargetSpec, budget: Budget) -> Self {
        Self {
            target,
            out_dir: None,
            seed_dir: None,
            seeds: Vec::new(),
            rng_seed: 0,
            budget,
            flaky_reruns: crate::oracle::DEFAULT_FLAKY_RERUNS,
            mem_fill: true,
            phase_weights: PhaseWeights::default(),
            timeout_ms: 1000,
            stop_on_leak: false,
            entry_budget: DEFAULT_ENTRY_BUDGET,
            max_part_len: MAX_PART_LEN,
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.budget.wall_seconds.is_none() && self.budget.max_execs.is_none() {
            return Err(CampaignError::Config(
                "budget needs a wall-clock or exec bound".into(),
            ));
        }
        if let Some(s) = self.budget.wall_seconds {
            if !s.is_finite() || s < 0.0 {
                return Err(CampaignError::Config(format!("invalid wall budget {s}")));
            }
        }
        if self.flaky_reruns == 0 {
            return Err(CampaignError::Config(
                "flaky reruns must be at least 1".into(),
            ));
        }
        if self.max_part_len > u32::MAX as usize {
            return Err(CampaignError::Config(
                "part limit exceeds the wire format".into(),
            ));
        }
        Ok(())
    }

    pub fn arena(&self) -> ArenaConfig {
        ArenaConfig {
            fill_enabled: self.mem_fill,
            ..ArenaConfig::default()
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Target(#[from] ExecutorError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub input: HyperInput,
    pub discovered_at: u64,
    pub coverage_digest: Hash64,
    pub favored: bool,
}

impl SpliceSource for [QueueEntry] {
    fn splice_len(&self) -> usize {
        self.len()
    }

    fn splice_input(&self, index: usize) -> &HyperInput {
        &self[index].input
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CampaignStats {
    /// Main-loop executions, one per generated input.
    pub execs: u64,
    pub execs_per_sec: f64,
    pub queue_len: u64,
    pub unique_public_keys: u64,
    pub suspected: u64,
    pub confirmed: u64,
    pub flaky_discards: u64,
    /// Executions made by flakiness checks, not part of `execs`.
    pub flaky_reruns: u64,
    pub crashes: u64,
    pub timeouts: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub stats: CampaignStats,
    pub oracle: OracleCounters,
    pub hypertests: Vec<HypertestRecord>,
    /// Inputs produced by the loop (seeds included).
    pub generated_inputs: u64,
    /// Every execution the executor performed.
    pub target_runs: u64,
    pub queue: Vec<QueueEntry>,
}

struct OutDir {
    root: PathBuf,
    stats: File,
}

impl OutDir {
    fn create(root: &Path, config: &CampaignConfig) -> Result<Self, CampaignError> {
        for sub in ["queue", "crashes"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let setup = root.join("fuzzer_setup.json");
        let json = serde_json::to_vec_pretty(config).expect("config serializes");
        fs::write(&setup, json).map_err(io_err(&setup))?;
        let stats_path = root.join("stats.jsonl");
        let stats = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&stats_path)
            .map_err(io_err(&stats_path))?;
        Ok(Self {
            root: root.to_path_buf(),
            stats,
        })
    }

    fn write_file(&self, sub: &str, name: &str, bytes: &[u8]) {
        let path = self.root.join(sub).join(name);
        if let Err(e) = fs::write(&path, bytes) {
            warn!("writing {} failed: {e}", path.display());
        }
    }
}

fn load_seed_dir(dir: &Path) -> Result<Vec<HyperInput>, CampaignError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| fs::read(p).map(|raw| decode(&raw)).map_err(io_err(p)))
        .collect()
}

pub struct Campaign {
    config: CampaignConfig,
    executor: Box<dyn Executor>,
    stop: Arc<AtomicBool>,
}

impl Campaign {
    /// Builds the configured target; start-up errors surface here.
    pub fn new(config: CampaignConfig) -> Result<Self, CampaignError> {
        config.validate()?;
        let executor = config.target.build(config.arena(), config.timeout())?;
        Ok(Self::with_executor(config, executor))
    }

    /// Uses a caller-supplied executor; `config.target` is only echoed.
    pub fn with_executor(config: CampaignConfig, executor: Box<dyn Executor>) -> Self {
        Self {
            config,
            executor,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Setting the flag ends the campaign before the next execution.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn with_stop_flag(mut self, stop: Arc<AtomicBool>) -> Self {
        self.stop = stop;
        self
    }

    pub fn run(self) -> Result<CampaignOutcome, CampaignError> {
        self.config.validate()?;
        let out = match &self.config.out_dir {
            Some(dir) => Some(OutDir::create(dir, &self.config)?),
            None => None,
        };
        let sink = match &out {
            Some(o) => {
                let p = o.root.join("hypertests.jsonl");
                ReportSink::create(&p).map_err(io_err(&p))?
            }
            None => ReportSink::in_memory(),
        };
        let mut seeds = match &self.config.seed_dir {
            Some(dir) => load_seed_dir(dir)?,
            None => Vec::new(),
        };
        seeds.extend(self.config.seeds.iter().cloned());
        if seeds.is_empty() {
            seeds.push(HyperInput::default());
        }

        let table = LeakTable::new(LeakTableConfig {
            flaky_reruns: self.config.flaky_reruns,
            entry_budget: self.config.entry_budget,
        });
        let mut state = Loop {
            rng: ChaCha8Rng::seed_from_u64(self.config.rng_seed),
            config: self.config,
            executor: self.executor,
            stop: self.stop,
            start: Instant::now(),
            out,
            sink,
            table,
            global: GlobalCoverage::new(),
            queue: Vec::new(),
            top_rated: vec![None; MAP_SIZE],
            crash_hashes: HashSet::new(),
            execs: 0,
            crashes: 0,
            timeouts: 0,
            last_snapshot_execs: None,
            next_snapshot: STATS_INTERVAL,
        };
        state.run(seeds);
        Ok(state.finish())
    }
}

/// Queue index and encoded length of the smallest entry hitting an edge.
type TopRated = Option<(usize, usize)>;

struct Loop {
    config: CampaignConfig,
    executor: Box<dyn Executor>,
    stop: Arc<AtomicBool>,
    rng: ChaCha8Rng,
    start: Instant,
    out: Option<OutDir>,
    sink: ReportSink,
    table: LeakTable,
    global: GlobalCoverage,
    queue: Vec<QueueEntry>,
    top_rated: Vec<TopRated>,
    crash_hashes: HashSet<Hash64>,
    execs: u64,
    crashes: u64,
    timeouts: u64,
    last_snapshot_execs: Option<u64>,
    next_snapshot: Duration,
}

impl Loop {
    fn should_stop(&mut self) -> bool {
        if self.stop.load(Ordering::Relaxed) {
            return true;
        }
        if self.config.stop_on_leak && self.table.counters().confirmed > 0 {
            return true;
        }
        if let Some(max) = self.config.budget.max_execs {
            if self.execs >= max {
                return true;
            }
        }
        let elapsed = self.start.elapsed();
        if elapsed >= self.next_snapshot {
            self.snapshot();
            self.next_snapshot = elapsed + STATS_INTERVAL;
        }
        if let Some(wall) = self.config.budget.wall_seconds {
            if elapsed.as_secs_f64() >= wall {
                return true;
            }
        }
        false
    }

    fn run(&mut self, seeds: Vec<HyperInput>) {
        for seed in seeds {
            if self.should_stop() {
                return;
            }
            self.run_one(seed, true);
        }
        let weights = self.config.phase_weights;
        let limit = self.config.max_part_len;
        loop {
            if self.queue.is_empty() {
                // every seed crashed; keep mutating the empty input
                if self.should_stop() {
                    return;
                }
                let phase = choose_phase(&mut self.rng, &weights);
                let empty: [HyperInput; 0] = [];
                let child = mutate_with_limit(
                    &HyperInput::default(),
                    phase,
                    &mut self.rng,
                    &empty[..],
                    limit,
                );
                self.run_one(child, false);
                continue;
            }
            for idx in self.schedule() {
                for _ in 0..HAVOC_ROUNDS {
                    if self.should_stop() {
                        return;
                    }
                    let phase = choose_phase(&mut self.rng, &weights);
                    let child = mutate_with_limit(
                        &self.queue[idx].input,
                        phase,
                        &mut self.rng,
                        &self.queue[..],
                        limit,
                    );
                    self.run_one(child, false);
                }
            }
        }
    }

    /// One cycle: favored entries, then the whole queue.
    fn schedule(&mut self) -> Vec<usize> {
        for e in &mut self.queue {
            e.favored = false;
        }
        for (idx, _) in self.top_rated.iter().flatten() {
            self.queue[*idx].favored = true;
        }
        let favored = (0..self.queue.len()).filter(|&i| self.queue[i].favored);
        favored.chain(0..self.queue.len()).collect()
    }

    fn run_one(&mut self, input: HyperInput, seed: bool) {
        let exec_index = self.execs;
        self.execs += 1;

        let res = self.executor.execute(&input);
        let status = res.status;
        let Some(output) = res.output else {
            match status {
                ExecStatus::Timeout => self.timeouts += 1,
                _ => self.crashes += 1,
            }
            self.save_crash(&input, exec_index, status);
            return;
        };
        let novel = is_interesting(res.coverage, &mut self.global);
        let queued = if novel || seed {
            let edges: Vec<usize> = res.coverage.iter_hit().map(|(e, _)| e).collect();
            Some((res.coverage.digest(), edges))
        } else {
            None
        };

        let executor = &mut self.executor;
        let verdict = self
            .table
            .observe(&input, &output, &mut |i: &HyperInput| executor.rerun(i));
        if let Verdict::LeakConfirmed(h) = &verdict {
            let ms = self.start.elapsed().as_millis() as u64;
            if self.sink.emit(h, exec_index, ms) {
                info!("hypertest confirmed at exec {exec_index}");
            }
        }

        if let Some((digest, edges)) = queued {
            self.enqueue(input, exec_index, digest, &edges);
        }
    }

    fn enqueue(&mut self, input: HyperInput, exec_index: u64, digest: Hash64, edges: &[usize]) {
        let idx = self.queue.len();
        let len = input.encoded_len();
        for &edge in edges {
            match self.top_rated[edge] {
                Some((_, best)) if best <= len => {}
                _ => self.top_rated[edge] = Some((idx, len)),
            }
        }
        if let Some(out) = &self.out {
            match encode(&input) {
                Ok(raw) => out.write_file("queue", &format!("{exec_index:08}-{digest}"), &raw),
                Err(e) => warn!("not persisting queue entry {exec_index}: {e}"),
            }
        }
        self.queue.push(QueueEntry {
            input,
            discovered_at: exec_index,
            coverage_digest: digest,
            favored: false,
        });
    }

    fn save_crash(&mut self, input: &HyperInput, exec_index: u64, status: ExecStatus) {
        let Ok(raw) = encode(input) else { return };
        let h = fingerprint(&raw);
        if !self.crash_hashes.insert(h) {
            return;
        }
        if let Some(out) = &self.out {
            let kind = match status {
                ExecStatus::Timeout => "timeout",
                _ => "crash",
            };
            out.write_file("crashes", &format!("{exec_index:08}-{kind}-{h}"), &raw);
        }
    }

    fn stats(&self) -> CampaignStats {
        let wall = self.start.elapsed().as_secs_f64();
        let c = self.table.counters();
        CampaignStats {
            execs: self.execs,
            execs_per_sec: if wall > 0.0 {
                self.execs as f64 / wall
            } else {
                0.0
            },
            queue_len: self.queue.len() as u64,
            unique_public_keys: self.table.unique_public_keys() as u64,
            suspected: c.suspected_leaks,
            confirmed: c.confirmed,
            flaky_discards: c.flaky_discards,
            flaky_reruns: c.flaky_reruns,
            crashes: self.crashes,
            timeouts: self.timeouts,
            wall_time: wall,
        }
    }

    /// Appends a stats line if executions advanced since the last one.
    fn snapshot(&mut self) {
        if self
            .last_snapshot_execs
            .is_some_and(|last| last >= self.execs)
        {
            return;
        }
        let stats = self.stats();
        if let Some(out) = self.out.as_mut() {
            let mut line = serde_json::to_vec(&stats).expect("stats serialize");
            line.push(b'\n');
            if let Err(e) = out.stats.write_all(&line).and_then(|_| out.stats.flush()) {
                warn!("writing stats failed: {e}");
            }
        }
        self.last_snapshot_execs = Some(self.execs);
    }

    fn finish(mut self) -> CampaignOutcome {
        self.snapshot();
        CampaignOutcome {
            stats: self.stats(),
            oracle: *self.table.counters(),
            hypertests: self.sink.records().to_vec(),
            generated_inputs: self.execs,
            target_runs: self.executor.runs(),
            queue: self.queue,
        }
    }
}

pub fn run_campaign(config: CampaignConfig) -> Result<CampaignOutcome, CampaignError> {
    Campaign::new(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(target: &str, budget: Budget) -> CampaignConfig {
        CampaignConfig::new(target.parse().unwrap(), budget)
    }

    #[test]
    fn zero_exec_budget_runs_nothing() {
        let out = run_campaign(config("builtin:isLarge", Budget::execs(0))).unwrap();
        assert_eq!(out.stats.execs, 0);
        assert_eq!(out.target_runs, 0);
        assert!(out.hypertests.is_empty());
    }

    #[test]
    fn budget_must_be_bounded() {
        let c = config(
            "builtin:isLarge",
            Budget {
                wall_seconds: None,
                max_execs: None,
            },
        );
        assert!(matches!(run_campaign(c), Err(CampaignError::Config(_))));
    }

    #[test]
    fn unknown_target_is_a_startup_error() {
        let c = config("builtin:nope", Budget::execs(10));
        assert!(matches!(run_campaign(c), Err(CampaignError::Target(_))));
    }

    #[test]
    fn constant_target_confirms_nothing() {
        let out = run_campaign(config("builtin:constantSafe", Budget::execs(20_000))).unwrap();
        assert_eq!(out.stats.execs, 20_000);
        assert_eq!(out.stats.confirmed, 0);
        assert_eq!(out.stats.flaky_reruns, 0);
        assert_eq!(out.target_runs, 20_000);
    }

    #[test]
    fn is_large_leak_is_found() {
        let mut c = config("builtin:isLarge", Budget::execs(50_000));
        c.stop_on_leak = true;
        let out = run_campaign(c).unwrap();
        assert!(out.stats.confirmed >= 1);
        assert_eq!(out.hypertests.len() as u64, out.stats.confirmed);
        assert_eq!(out.target_runs, out.stats.execs + out.stats.flaky_reruns);
    }

    #[test]
    fn seeds_are_queued() {
        let mut c = config("builtin:constantSafe", Budget::execs(3));
        c.seeds = vec![HyperInput::new([1], [2]), HyperInput::new([1], [3])];
        let out = run_campaign(c).unwrap();
        // the default seed is only used when none are given
        assert_eq!(out.queue.len(), 2);
        assert_eq!(out.queue[0].discovered_at, 0);
    }

    #[test]
    fn stop_flag_ends_the_run() {
        let campaign =
            Campaign::new(config("builtin:constantSafe", Budget::seconds(60.0))).unwrap();
        campaign.stop_flag().store(true, Ordering::Relaxed);
        let out = campaign.run().unwrap();
        assert_eq!(out.stats.execs, 0);
    }
}
