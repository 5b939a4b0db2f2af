// SPDX-License-Identifier: Apache-2.0

//! Child-process executor.
//!
//! Each run spawns the harness, writes the encoded input to its stdin and
//! captures stdout. Exit code 0 is `Ok`; any other exit or a signal is a
//! crash. Edge counters come back through a shared segment whose id is passed
//! in [`SHM_ENV`]; without one the harness runs uninstrumented.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use log::warn;
use wait_timeout::ChildExt;

use super::shm::SharedMap;
use super::{ExecStatus, ExecutionResult, Executor, ExecutorError};
use crate::coverage::{CoverageMap, MAP_SIZE};
use crate::model::{encode, HyperInput};

/// Environment variable naming the coverage segment.
pub const SHM_ENV: &str = "HYPERFUZZ_SHM_ID";
/// Set to `1` in the child when memory pre-fill is disabled.
pub const NO_FILL_ENV: &str = "HYPERFUZZ_NO_FILL";

pub struct ExternalExecutor {
    path: PathBuf,
    fill_enabled: bool,
    timeout: Duration,
    shm: Option<SharedMap>,
    coverage: CoverageMap,
    runs: u64,
}

impl ExternalExecutor {
    pub fn new(
        path: PathBuf,
        fill_enabled: bool,
        timeout: Duration,
    ) -> Result<Self, ExecutorError> {
        let meta = std::fs::metadata(&path).map_err(|e| ExecutorError::NotRunnable {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if !meta.is_file() {
            return Err(ExecutorError::NotRunnable {
                path,
                reason: "not a regular file".into(),
            });
        }
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            if meta.permissions().mode() & 0o111 == 0 {
                return Err(ExecutorError::NotRunnable {
                    path,
                    reason: "not executable".into(),
                });
            }
        }
        let shm = match SharedMap::create(MAP_SIZE) {
            Ok(shm) => Some(shm),
            Err(e) => {
                warn!(
                    "no shared coverage map ({e}); running {} uninstrumented",
                    path.display()
                );
                None
            }
        };
        Ok(Self {
            path,
            fill_enabled,
            timeout,
            shm,
            coverage: CoverageMap::new(),
            runs: 0,
        })
    }

    pub fn has_coverage_map(&self) -> bool {
        self.shm.is_some()
    }

    fn run_child(&mut self, input: &HyperInput) -> (ExecStatus, Vec<u8>) {
        let Ok(stdin_bytes) = encode(input) else {
            return (ExecStatus::Crash, Vec::new());
        };
        let mut cmd = Command::new(&self.path);
        cmd.stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        // Own process group, so grandchildren holding stdout open can be killed.
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        match &self.shm {
            Some(shm) => cmd.env(SHM_ENV, shm.id().to_string()),
            None => cmd.env_remove(SHM_ENV),
        };
        if self.fill_enabled {
            cmd.env_remove(NO_FILL_ENV);
        } else {
            cmd.env(NO_FILL_ENV, "1");
        }

        let mut child = match cmd.spawn() {
            Ok(child) => child,
            Err(e) => {
                warn!("spawning {} failed: {e}", self.path.display());
                return (ExecStatus::Crash, Vec::new());
            }
        };

        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            // The child may exit without reading everything; that is not our error.
            let _ = stdin.write_all(&stdin_bytes);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });

        let status = match child.wait_timeout(self.timeout) {
            Ok(Some(status)) if status.success() => ExecStatus::Ok,
            Ok(Some(_)) => ExecStatus::Crash,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                ExecStatus::Timeout
            }
            Err(e) => {
                warn!("waiting on {} failed: {e}", self.path.display());
                let _ = child.kill();
                let _ = child.wait();
                ExecStatus::Crash
            }
        };
        // A group id is not recycled while any member lives, so this cannot
        // reach an unrelated process even though the leader is reaped.
        #[cfg(unix)]
        unsafe {
            libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
        }
        let _ = writer.join();
        let output = reader.join().unwrap_or_default();
        (status, output)
    }
}

impl Executor for ExternalExecutor {
    fn execute(&mut self, input: &HyperInput) -> ExecutionResult<'_> {
        self.runs += 1;
        if let Some(shm) = self.shm.as_mut() {
            shm.clear();
        }
        let (status, output) = self.run_child(input);
        match &self.shm {
            Some(shm) => self.coverage.as_mut_slice().copy_from_slice(shm.as_slice()),
            None => self.coverage.reset(),
        }
        ExecutionResult::new(status, output, &self.coverage)
    }

    fn runs(&self) -> u64 {
        self.runs
    }

    fn describe(&self) -> String {
        format!("exec:{}", self.path.display())
    }
}
