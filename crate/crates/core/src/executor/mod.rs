// SPDX-License-Identifier: Apache-2.0

//! Running one [`HyperInput`] against a target.

mod arena;
mod external;
pub(crate) mod shm;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::CoverageMap;
use crate::model::HyperInput;
use crate::targets::{self, UnknownTarget};

pub use arena::{
    derive_fill_pattern, ArenaConfig, FillPattern, MemoryArena, SplitMix64, DEFAULT_ARENA_SIZE,
};
pub use external::{ExternalExecutor, NO_FILL_ENV, SHM_ENV};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(1000);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    Crash,
    Timeout,
}

/// Outcome of one execution. `output` is `Some` iff `status` is `Ok`;
/// `coverage` borrows the executor's map for this run.
#[derive(Debug)]
pub struct ExecutionResult<'a> {
    pub output: Option<Vec<u8>>,
    pub status: ExecStatus,
    pub coverage: &'a CoverageMap,
}

impl<'a> ExecutionResult<'a> {
    fn new(status: ExecStatus, output: Vec<u8>, coverage: &'a CoverageMap) -> Self {
        Self {
            output: (status == ExecStatus::Ok).then_some(output),
            status,
            coverage,
        }
    }
}

/// Edge callback handed to in-process targets.
pub struct CoverageHook<'a> {
    map: &'a mut CoverageMap,
}

impl<'a> CoverageHook<'a> {
    pub fn new(map: &'a mut CoverageMap) -> Self {
        Self { map }
    }

    #[inline]
    pub fn hit(&mut self, edge: u32) {
        self.map.hit(edge as usize);
    }
}

/// A program that can be run in-process on (public, secret, memory).
pub trait Target: Send {
    fn name(&self) -> &str;

    fn run(
        &mut self,
        public: &[u8],
        secret: &[u8],
        arena: &mut MemoryArena,
        coverage: &mut CoverageHook<'_>,
    ) -> Vec<u8>;
}

pub trait Executor {
    /// Runs `input` once; coverage is reset first.
    fn execute(&mut self, input: &HyperInput) -> ExecutionResult<'_>;

    /// Total executions performed, including reruns.
    fn runs(&self) -> u64;

    fn describe(&self) -> String;

    /// Runs `input` and keeps only the output (`None` on crash or timeout).
    fn rerun(&mut self, input: &HyperInput) -> Option<Vec<u8>> {
        self.execute(input).output
    }
}

impl<E: Executor + ?Sized> Executor for Box<E> {
    fn execute(&mut self, input: &HyperInput) -> ExecutionResult<'_> {
        (**self).execute(input)
    }

    fn runs(&self) -> u64 {
        (**self).runs()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

pub struct InProcessExecutor<T> {
    target: T,
    arena: MemoryArena,
    coverage: CoverageMap,
    timeout: Duration,
    runs: u64,
}

impl<T: Target> InProcessExecutor<T> {
    pub fn new(target: T, arena: ArenaConfig, timeout: Duration) -> Self {
        Self {
            target,
            arena: MemoryArena::new(arena),
            coverage: CoverageMap::new(),
            timeout,
            runs: 0,
        }
    }

    pub fn target(&self) -> &T {
        &self.target
    }
}

impl<T: Target> Executor for InProcessExecutor<T> {
    fn execute(&mut self, input: &HyperInput) -> ExecutionResult<'_> {
        self.runs += 1;
        self.coverage.reset();
        self.arena.prepare(&input.secret);
        let start = Instant::now();
        let target = &mut self.target;
        let arena = &mut self.arena;
        let coverage = &mut self.coverage;
        let result = panic::catch_unwind(AssertUnwindSafe(|| {
            let mut hook = CoverageHook::new(coverage);
            target.run(&input.public, &input.secret, arena, &mut hook)
        }));
        // In-process runs cannot be preempted; the deadline is checked after the fact.
        let (status, output) = match result {
            Ok(_) if start.elapsed() > self.timeout => (ExecStatus::Timeout, Vec::new()),
            Ok(out) => (ExecStatus::Ok, out),
            Err(_) => (ExecStatus::Crash, Vec::new()),
        };
        ExecutionResult::new(status, output, &self.coverage)
    }

    fn runs(&self) -> u64 {
        self.runs
    }

    fn describe(&self) -> String {
        format!("builtin:{}", self.target.name())
    }
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("malformed target spec {0:?}, expected builtin:<name> or exec:<path>")]
    BadSpec(String),
    #[error(transparent)]
    UnknownBuiltin(#[from] UnknownTarget),
    #[error("target {path:?} is not runnable: {reason}")]
    NotRunnable { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSpec {
    Builtin(String),
    Exec(PathBuf),
}

impl FromStr for TargetSpec {
    type Err = ExecutorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("builtin", name)) if !name.is_empty() => Ok(TargetSpec::Builtin(name.into())),
            Some(("exec", path)) if !path.is_empty() => Ok(TargetSpec::Exec(path.into())),
            _ => Err(ExecutorError::BadSpec(s.into())),
        }
    }
}

impl std::fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetSpec::Builtin(name) => write!(f, "builtin:{name}"),
            TargetSpec::Exec(path) => write!(f, "exec:{}", path.display()),
        }
    }
}

impl TargetSpec {
    pub fn build(
        &self,
        arena: ArenaConfig,
        timeout: Duration,
    ) -> Result<Box<dyn Executor>, ExecutorError> {
        match self {
            TargetSpec::Builtin(name) => {
                let target = targets::builtin(name)?;
                Ok(Box::new(InProcessExecutor::new(target, arena, timeout)))
            }
            TargetSpec::Exec(path) => Ok(Box::new(ExternalExecutor::new(
                path.clone(),
                arena.fill_enabled,
                timeout,
            )?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Panicky;

    impl Target for Panicky {
        fn name(&self) -> &str {
            "panicky"
        }

        fn run(
            &mut self,
            public: &[u8],
            _secret: &[u8],
            _arena: &mut MemoryArena,
            coverage: &mut CoverageHook<'_>,
        ) -> Vec<u8> {
            coverage.hit(5);
            if public.first() == Some(&0xFF) {
                panic!("boom");
            }
            public.to_vec()
        }
    }

    struct Slow;

    impl Target for Slow {
        fn name(&self) -> &str {
            "slow"
        }

        fn run(
            &mut self,
            _: &[u8],
            _: &[u8],
            _: &mut MemoryArena,
            _: &mut CoverageHook<'_>,
        ) -> Vec<u8> {
            std::thread::sleep(Duration::from_millis(20));
            vec![1]
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "builtin:isLarge".parse::<TargetSpec>().unwrap(),
            TargetSpec::Builtin("isLarge".into())
        );
        assert_eq!(
            "exec:/bin/cat".parse::<TargetSpec>().unwrap(),
            TargetSpec::Exec("/bin/cat".into())
        );
        assert!("isLarge".parse::<TargetSpec>().is_err());
        assert!("builtin:".parse::<TargetSpec>().is_err());
    }

    #[test]
    fn unknown_builtin_fails_to_build() {
        let spec: TargetSpec = "builtin:nope".parse().unwrap();
        assert!(matches!(
            spec.build(ArenaConfig::default(), DEFAULT_TIMEOUT),
            Err(ExecutorError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn panic_is_a_crash() {
        let prev = panic::take_hook();
        panic::set_hook(Box::new(|_| {}));
        let mut exec = InProcessExecutor::new(Panicky, ArenaConfig::default(), DEFAULT_TIMEOUT);
        let res = exec.execute(&HyperInput::new([0xFF], []));
        assert_eq!(res.status, ExecStatus::Crash);
        assert!(res.output.is_none());
        let res = exec.execute(&HyperInput::new([1], []));
        assert_eq!(res.status, ExecStatus::Ok);
        assert_eq!(res.output.as_deref(), Some(&[1u8][..]));
        assert_eq!(res.coverage.get(5), 1);
        panic::set_hook(prev);
    }

    #[test]
    fn overrunning_the_deadline_is_a_timeout() {
        let mut exec =
            InProcessExecutor::new(Slow, ArenaConfig::default(), Duration::from_millis(1));
        let res = exec.execute(&HyperInput::default());
        assert_eq!(res.status, ExecStatus::Timeout);
        assert!(res.output.is_none());
    }

    #[test]
    fn coverage_resets_between_runs() {
        let mut exec = InProcessExecutor::new(Panicky, ArenaConfig::default(), DEFAULT_TIMEOUT);
        exec.execute(&HyperInput::default());
        let res = exec.execute(&HyperInput::default());
        assert_eq!(res.coverage.get(5), 1);
        assert_eq!(exec.runs(), 2);
    }
}
