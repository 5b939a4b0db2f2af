// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Runtime is dominated by the campaign criterion: three non-leaky targets
//! times twenty 60-second campaigns, run one after another.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hyperfuzz::campaign::{Budget, CampaignConfig};
use hyperfuzz::executor::{ArenaConfig, Executor, DEFAULT_TIMEOUT};
use hyperfuzz::mutate::{mutate, MutationPhase};
use hyperfuzz::oracle::{self_composition_oracle, OracleCounters};
use hyperfuzz::targets::BUILTINS;
use hyperfuzz::{decode, encode, hash64, HyperInput, TargetSpec};
use hyperfuzz_cli::{
    cmd_check_exhaustive, cmd_fuzz, cmd_replay, parse_domain, ReplayVerdict, RunOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FLAKY_RERUNS: u64 = 100;
const CAMPAIGN_SECONDS: f64 = 60.0;
const CAMPAIGN_SEEDS: u64 = 20;
const REQUIRED_HITS: usize = 18;

struct Line {
    id: u32,
    pass: bool,
    summary: String,
}

fn report(lines: &mut Vec<Line>, id: u32, pass: bool, summary: String) {
    println!(
        "criterion {id} [{}] {summary}",
        if pass { "PASS" } else { "FAIL" }
    );
    lines.push(Line { id, pass, summary });
}

fn builtin(name: &str) -> TargetSpec {
    TargetSpec::Builtin(name.to_string())
}

fn fill_opts(mem_fill: bool) -> RunOptions {
    RunOptions {
        mem_fill,
        ..RunOptions::default()
    }
}

fn criterion_1() -> (bool, String) {
    let start = Instant::now();
    let mut exec = builtin("isLarge")
        .build(ArenaConfig::default(), DEFAULT_TIMEOUT)
        .unwrap();
    let secrets: Vec<Vec<u8>> = (0..4u8).map(|s| vec![s]).collect();
    let sc =
        self_composition_oracle(&mut |i: &HyperInput| exec.rerun(i), &[vec![]], &secrets).unwrap();
    let t = start.elapsed();
    let pass = sc.pairs_checked() == 6 && sc.violation_count() == 3 && t < Duration::from_secs(1);
    (
        pass,
        format!(
            "isLarge over secrets {{0,1,2,3}}: {} of {} pairs violate in {:.3}s (want 3 of 6, < 1 s)",
            sc.violation_count(),
            sc.pairs_checked(),
            t.as_secs_f64()
        ),
    )
}

/// Fill-enabled violation counts per target, reused by the ablation check.
type FillCounts = Vec<(&'static str, u64)>;

fn criterion_2() -> (bool, String, FillCounts) {
    let domain = parse_domain("0..255").unwrap();
    let start = Instant::now();
    let mut bad = Vec::new();
    let mut counts = Vec::new();
    for b in BUILTINS {
        let r = cmd_check_exhaustive(&builtin(b.name), &domain, &domain, fill_opts(true)).unwrap();
        let ok = r.exit_code() == 0 && r.leak_found() == b.expected_leak();
        println!(
            "    {:<17} pairs {} violations {} excluded {} agree {} expected leak {} -> {}",
            b.name,
            r.pairs_checked,
            r.violations,
            r.nondeterministic_points,
            r.agrees(),
            b.expected_leak(),
            if ok { "ok" } else { "MISMATCH" }
        );
        if !ok {
            bad.push(b.name);
        }
        counts.push((b.name, r.violations));
    }
    let t = start.elapsed();
    let pass = bad.is_empty() && t < Duration::from_secs(300);
    (
        pass,
        format!(
            "{} builtins over 256x256 with fill: {} agree with expected leak flags in {:.1}s (< 300 s){}",
            BUILTINS.len(),
            BUILTINS.len() - bad.len(),
            t.as_secs_f64(),
            if bad.is_empty() { String::new() } else { format!("; mismatches: {bad:?}") }
        ),
        counts,
    )
}

struct CampaignRun {
    target: &'static str,
    seed: u64,
    report: PathBuf,
    confirmed: u64,
    execs: u64,
    generated: u64,
    target_runs: u64,
    flaky_reruns: u64,
    oracle: OracleCounters,
}

fn run_campaigns(scratch: &std::path::Path) -> Vec<CampaignRun> {
    let mut runs = Vec::new();
    for b in BUILTINS {
        let start = Instant::now();
        for seed in 1..=CAMPAIGN_SEEDS {
            let out = scratch.join(format!("{}-{seed}", b.name));
            let mut config =
                CampaignConfig::new(builtin(b.name), Budget::seconds(CAMPAIGN_SECONDS));
            config.out_dir = Some(out.clone());
            config.rng_seed = seed;
            // A leaky campaign has answered the question once it confirms.
            config.stop_on_leak = b.expected_leak();
            let o = cmd_fuzz(config).unwrap();
            runs.push(CampaignRun {
                target: b.name,
                seed,
                report: out.join("hypertests.jsonl"),
                confirmed: o.stats.confirmed,
                execs: o.stats.execs,
                generated: o.generated_inputs,
                target_runs: o.target_runs,
                flaky_reruns: o.stats.flaky_reruns,
                oracle: o.oracle,
            });
        }
        let mine: Vec<_> = runs.iter().filter(|r| r.target == b.name).collect();
        println!(
            "    {:<17} confirmed in {}/{} runs, {} execs total, {:.0}s",
            b.name,
            mine.iter().filter(|r| r.confirmed > 0).count(),
            mine.len(),
            mine.iter().map(|r| r.execs).sum::<u64>(),
            start.elapsed().as_secs_f64()
        );
    }
    runs
}

fn criterion_3(runs: &[CampaignRun]) -> (bool, String) {
    let mut failures = Vec::new();
    for b in BUILTINS {
        let hits = runs
            .iter()
            .filter(|r| r.target == b.name && r.confirmed > 0)
            .count();
        let ok = if b.expected_leak() {
            hits >= REQUIRED_HITS
        } else {
            hits == 0
        };
        if !ok {
            failures.push(format!("{} confirmed in {hits}/{CAMPAIGN_SEEDS}", b.name));
        }
    }
    let leaky = BUILTINS.iter().filter(|b| b.expected_leak()).count();
    (
        failures.is_empty(),
        format!(
            "{leaky} leaky builtins confirmed in >= {REQUIRED_HITS}/{CAMPAIGN_SEEDS} runs of {CAMPAIGN_SECONDS} s; \
             {} controls confirmed nothing{}",
            BUILTINS.len() - leaky,
            if failures.is_empty() { String::new() } else { format!("; failures: {failures:?}") }
        ),
    )
}

fn criterion_4(runs: &[CampaignRun]) -> (bool, String) {
    let mut records = 0;
    let mut bad = Vec::new();
    for r in runs {
        let rep = cmd_replay(&r.report, &builtin(r.target), RunOptions::default()).unwrap();
        records += rep.records.len();
        for rec in &rep.records {
            let ok = rec.verdict == ReplayVerdict::Leak
                && !rec.hash_mismatch
                && rec.runs == 2 * FLAKY_RERUNS;
            if !ok {
                bad.push(format!(
                    "{}#{} record {}: {}",
                    r.target, r.seed, rec.record, rec.verdict
                ));
            }
        }
        if rep.exit_code() != 0 {
            bad.push(format!(
                "{}#{} replay exit {}",
                r.target,
                r.seed,
                rep.exit_code()
            ));
        }
    }
    (
        bad.is_empty(),
        format!(
            "replayed {records} records from {} reports, each side {FLAKY_RERUNS} stable runs with differing outputs{}",
            runs.len(),
            if bad.is_empty() { String::new() } else { format!("; failures: {bad:?}") }
        ),
    )
}

fn criterion_5(runs: &[CampaignRun]) -> (bool, String) {
    let mut bad = Vec::new();
    let mut reruns = 0;
    let mut checks = 0;
    for r in runs {
        let c = &r.oracle;
        let ok = r.execs == r.generated
            && r.target_runs - r.flaky_reruns == r.generated
            && c.flaky_reruns == r.flaky_reruns
            && c.flaky_reruns == FLAKY_RERUNS * c.flaky_checks_passed + c.failed_check_reruns
            && c.flaky_checks_failed <= c.failed_check_reruns
            && c.failed_check_reruns <= FLAKY_RERUNS * c.flaky_checks_failed;
        if !ok {
            bad.push(format!("{}#{}", r.target, r.seed));
        }
        reruns += r.flaky_reruns;
        checks += c.flaky_checks_passed + c.flaky_checks_failed;
    }
    (
        bad.is_empty(),
        format!(
            "{} campaigns: main-loop runs equal generated inputs; {reruns} flakiness reruns over {checks} checks \
             book as 100 per passed check plus <= 100 per failed check{}",
            runs.len(),
            if bad.is_empty() { String::new() } else { format!("; failing audits: {bad:?}") }
        ),
    )
}

fn criterion_6(fill_counts: &FillCounts) -> (bool, String) {
    let domain = parse_domain("0..255").unwrap();
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["paddingStruct", "overRead"] {
        let on = cmd_check_exhaustive(&builtin(name), &domain, &domain, fill_opts(true)).unwrap();
        let off = cmd_check_exhaustive(&builtin(name), &domain, &domain, fill_opts(false)).unwrap();
        let earlier = fill_counts
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v);
        let ok = on.violations > 0 && off.violations == 0 && earlier == Some(on.violations);
        pass &= ok;
        parts.push(format!(
            "{name} {} with fill (earlier run {}), {} without",
            on.violations,
            earlier.map_or("?".into(), |v| v.to_string()),
            off.violations
        ));
    }
    let t = start.elapsed();
    pass &= t < Duration::from_secs(60);
    (
        pass,
        format!("{} in {:.1}s (< 60 s)", parts.join("; "), t.as_secs_f64()),
    )
}

fn criterion_7() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = 5000;
    let mut mismatches = 0;
    for _ in 0..cases {
        let len = if rng.gen_bool(0.5) {
            rng.gen_range(0..64)
        } else {
            rng.gen_range(0..4096)
        };
        let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let seed: u64 = rng.gen();
        if hash64(&data, seed).0 != twox_hash::XxHash64::oneshot(seed, &data) {
            mismatches += 1;
        }
    }
    (
        mismatches == 0 && cases >= 1000,
        format!("{cases} random (data, seed) cases against an independent XXH64: {mismatches} mismatches"),
    )
}

fn criterion_8() -> (bool, String) {
    const PER_PHASE: usize = 100_000;
    let corpus = [
        HyperInput::new(b"public".to_vec(), b"secret".to_vec()),
        HyperInput::new(vec![], vec![0xff; 40]),
        HyperInput::new(vec![1, 2, 3, 4, 5, 6, 7, 8], vec![]),
        HyperInput::default(),
    ];
    let mut confinement = 0;
    let mut roundtrip = 0;
    let mut changed = 0;
    for phase in MutationPhase::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(0xacce97 + phase as u64);
        let mut base = corpus[0].clone();
        for i in 0..PER_PHASE {
            // walk a chain so inputs grow, restarting now and then
            if i % 64 == 0 {
                base = corpus[i / 64 % corpus.len()].clone();
            }
            let out = mutate(&base, phase, &mut rng, &corpus[..]);
            let confined = match phase {
                MutationPhase::PublicOnly => out.secret == base.secret,
                MutationPhase::SecretOnly => out.public == base.public,
                MutationPhase::Whole => true,
            };
            confinement += !confined as usize;
            match encode(&out) {
                Ok(raw) if decode(&raw) == out => {}
                _ => roundtrip += 1,
            }
            changed += (out != base) as usize;
            base = out;
        }
    }
    (
        confinement == 0 && roundtrip == 0,
        format!(
            "{PER_PHASE} mutations per phase: {confinement} confinement violations, {roundtrip} roundtrip failures \
             ({changed} of {} changed their input)",
            3 * PER_PHASE
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut lines = Vec::new();

    let (p, s) = criterion_1();
    report(&mut lines, 1, p, s);
    let (p, s, fill_counts) = criterion_2();
    report(&mut lines, 2, p, s);

    let scratch = tempfile::tempdir().unwrap();
    let runs = run_campaigns(scratch.path());
    let (p, s) = criterion_3(&runs);
    report(&mut lines, 3, p, s);
    let (p, s) = criterion_4(&runs);
    report(&mut lines, 4, p, s);
    let (p, s) = criterion_5(&runs);
    report(&mut lines, 5, p, s);

    let (p, s) = criterion_6(&fill_counts);
    report(&mut lines, 6, p, s);
    let (p, s) = criterion_7();
    report(&mut lines, 7, p, s);
    let (p, s) = criterion_8();
    report(&mut lines, 8, p, s);

    let failed: Vec<u32> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        lines.len() - failed.len(),
        lines.len(),
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        for l in lines.iter().filter(|l| !l.pass) {
            eprintln!("failed criterion {}: {}", l.id, l.summary);
        }
        ExitCode::FAILURE
    }
}
