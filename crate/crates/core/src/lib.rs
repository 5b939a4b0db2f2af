// SPDX-License-Identifier: Apache-2.0

//! Grey-box hyperfuzzing for noninterference.
//!
//! Inputs carry separate public and secret parts. Each generated input runs
//! once; outputs are cached as 64-bit hashes per public input, and two
//! executions with equal public inputs but different outputs that both
//! reproduce under reruns form a leak-witnessing [`Hypertest`].

pub mod campaign;
pub mod coverage;
pub mod executor;
pub mod harness;
pub mod hash;
pub mod model;
pub mod mutate;
pub mod oracle;
pub mod report;
pub mod targets;

pub use campaign::{
    run_campaign, Budget, Campaign, CampaignConfig, CampaignOutcome, CampaignStats,
};
pub use coverage::CoverageMap;
pub use executor::{ExecStatus, ExecutionResult, Executor, TargetSpec};
pub use hash::{hash64, Hash64};
pub use model::{decode, encode, HyperInput, Hypertest, SecurityLabel, MAX_PART_LEN};
pub use mutate::{choose_phase, mutate, MutationPhase, PhaseWeights};
pub use oracle::{flakiness_check, self_composition_oracle, LeakTable, Verdict};
pub use report::{HypertestRecord, ReportSink};
