// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use hyperfuzz::campaign::{Budget, CampaignConfig};
use hyperfuzz::mutate::PhaseWeights;
use hyperfuzz::oracle::{DEFAULT_ENTRY_BUDGET, DEFAULT_FLAKY_RERUNS};
use hyperfuzz::targets::BUILTINS;
use hyperfuzz::TargetSpec;
use hyperfuzz_cli::{
    cmd_check_exhaustive, cmd_fuzz, cmd_replay, parse_domain, CliError, RunOptions,
};

#[derive(Debug, Parser)]
#[command(
    name = "hyperfuzz",
    version,
    about = "Grey-box hyperfuzzer for noninterference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Re-execute every record of a hypertest report.
    Replay(ReplayArgs),
    /// Compare the exhaustive pairwise oracle with an observation sweep.
    CheckExhaustive(CheckArgs),
    /// List built-in targets.
    ListTargets,
}

#[derive(Debug, Args)]
struct ExecArgs {
    /// builtin:<name> or exec:<path>
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = DEFAULT_FLAKY_RERUNS)]
    flaky_reruns: u32,
    /// Leave the memory arena zeroed instead of filling it from the secret.
    #[arg(long)]
    no_mem_fill: bool,
    #[arg(long, default_value_t = 1000)]
    timeout_ms: u64,
}

impl ExecArgs {
    fn parse_target(&self) -> Result<TargetSpec, CliError> {
        Ok(self.target.parse()?)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            flaky_reruns: self.flaky_reruns.max(1),
            mem_fill: !self.no_mem_fill,
            timeout: Duration::from_millis(self.timeout_ms),
        }
    }
}

#[derive(Debug, Args)]
struct FuzzArgs {
    #[command(flatten)]
    exec: ExecArgs,
    #[arg(long, default_value = "hyperfuzz-out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long)]
    wall_seconds: Option<f64>,
    #[arg(long)]
    max_execs: Option<u64>,
    /// Relative weights of the public-only, secret-only and whole-input phases.
    #[arg(long, default_value = "1,1,1")]
    phase_weights: PhaseWeights,
    /// Stop at the first confirmed hypertest.
    #[arg(long)]
    stop_on_leak: bool,
    /// Maximum retained hash entries before eviction.
    #[arg(long, default_value_t = DEFAULT_ENTRY_BUDGET)]
    entry_budget: usize,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    report: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    exec: ExecArgs,
    /// Comma-separated `empty`, `N`, `A..B` or `x:HEX` items.
    #[arg(long, default_value = "0..255")]
    public_domain: String,
    #[arg(long, default_value = "0..255")]
    secret_domain: String,
}

fn fuzz(args: FuzzArgs) -> Result<i32, CliError> {
    let mut config = CampaignConfig::new(
        args.exec.parse_target()?,
        Budget {
            wall_seconds: args.wall_seconds,
            max_execs: args.max_execs,
        },
    );
    config.out_dir = Some(args.out_dir);
    config.seed_dir = args.seed_dir;
    config.rng_seed = args.rng_seed;
    config.flaky_reruns = args.exec.flaky_reruns;
    config.mem_fill = !args.exec.no_mem_fill;
    config.phase_weights = args.phase_weights;
    config.timeout_ms = args.exec.timeout_ms;
    config.stop_on_leak = args.stop_on_leak;
    config.entry_budget = args.entry_budget;

    let outcome = cmd_fuzz(config)?;
    let s = &outcome.stats;
    println!(
        "execs {} ({:.0}/s) in {:.1}s; queue {}; public keys {}; suspected {}; confirmed {}; \
         flaky discards {}; flaky reruns {}; crashes {}; timeouts {}",
        s.execs,
        s.execs_per_sec,
        s.wall_time,
        s.queue_len,
        s.unique_public_keys,
        s.suspected,
        s.confirmed,
        s.flaky_discards,
        s.flaky_reruns,
        s.crashes,
        s.timeouts
    );
    Ok(hyperfuzz_cli::EXIT_OK)
}

fn replay(args: ReplayArgs) -> Result<i32, CliError> {
    let report = cmd_replay(
        &args.report,
        &args.exec.parse_target()?,
        args.exec.options(),
    )?;
    for r in &report.records {
        let note = if r.hash_mismatch {
            " (recorded output hashes differ)"
        } else {
            ""
        };
        println!("record {}: {}{note}", r.record, r.verdict);
    }
    let bad: Vec<String> = report
        .records
        .iter()
        .filter(|r| r.verdict != hyperfuzz_cli::ReplayVerdict::Leak)
        .map(|r| r.record.to_string())
        .collect();
    if bad.is_empty() {
        println!("{} record(s) replayed", report.records.len());
    } else {
        println!("unreplayable records: {}", bad.join(", "));
    }
    Ok(report.exit_code())
}

fn check(args: CheckArgs) -> Result<i32, CliError> {
    let publics = parse_domain(&args.public_domain)?;
    let secrets = parse_domain(&args.secret_domain)?;
    let report = cmd_check_exhaustive(
        &args.exec.parse_target()?,
        &publics,
        &secrets,
        args.exec.options(),
    )?;
    println!("pairs checked: {}", report.pairs_checked);
    println!("violations: {}", report.violations);
    if report.nondeterministic_points > 0 {
        println!(
            "nondeterministic points excluded: {}",
            report.nondeterministic_points
        );
    }
    println!("sweep confirmed: {}", report.sweep.confirmed);
    let disagreeing: Vec<_> = report.keys.iter().filter(|k| !k.agrees()).collect();
    for k in disagreeing.iter().take(10) {
        println!(
            "disagreement at public {}: oracle violations {}, sweep leak {}",
            hex::encode(&k.public),
            k.oracle_violations,
            k.sweep_leak
        );
    }
    if disagreeing.len() > 10 {
        println!("... {} public keys disagree in total", disagreeing.len());
    }
    println!(
        "leak: {}; agreement: {}",
        if report.leak_found() { "yes" } else { "no" },
        if report.agrees() { "yes" } else { "no" }
    );
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuzz(a) => fuzz(a),
        Command::Replay(a) => replay(a),
        Command::CheckExhaustive(a) => check(a),
        Command::ListTargets => {
            for b in BUILTINS {
                println!("builtin:{:<18} {:?}", b.name, b.leak_class);
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("hyperfuzz: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
