// SPDX-License-Identifier: Apache-2.0

//! End-to-end campaign behaviour: determinism, execution accounting and the
//! output directory.

use std::fs;

use hyperfuzz::campaign::{Budget, CampaignConfig, CampaignOutcome};
use hyperfuzz::report::read_report;
use hyperfuzz::{encode, run_campaign, HyperInput, HypertestRecord, TargetSpec};

fn config(target: &str, execs: u64, seed: u64) -> CampaignConfig {
    let mut c = CampaignConfig::new(target.parse::<TargetSpec>().unwrap(), Budget::execs(execs));
    c.rng_seed = seed;
    c
}

/// Counter identities every campaign must satisfy.
fn audit(o: &CampaignOutcome, reruns: u64) {
    let c = &o.oracle;
    assert_eq!(o.stats.execs, o.generated_inputs);
    assert_eq!(
        c.observations + o.stats.crashes + o.stats.timeouts,
        o.stats.execs
    );
    assert_eq!(o.target_runs, o.stats.execs + o.stats.flaky_reruns);
    assert_eq!(c.flaky_reruns, o.stats.flaky_reruns);
    assert_eq!(
        c.flaky_reruns,
        reruns * c.flaky_checks_passed + c.failed_check_reruns
    );
    assert!(c.flaky_checks_failed <= c.failed_check_reruns);
    assert!(c.failed_check_reruns <= reruns * c.flaky_checks_failed);
    assert_eq!(c.flaky_checks_failed, c.flaky_discards);
    assert!(c.flaky_checks_passed >= c.suspected_leaks);
    assert!(c.flaky_checks_passed <= c.suspected_leaks + c.first_secret_checks);
    assert_eq!(o.hypertests.len() as u64, c.confirmed);
}

fn comparable(records: &[HypertestRecord]) -> Vec<HypertestRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.wall_time_ms = 0;
            r
        })
        .collect()
}

#[test]
fn same_seed_same_campaign() {
    for target in ["builtin:overRead", "builtin:totalLeak", "builtin:sumSafe"] {
        let a = run_campaign(config(target, 20_000, 11)).unwrap();
        let b = run_campaign(config(target, 20_000, 11)).unwrap();
        assert_eq!(
            comparable(&a.hypertests),
            comparable(&b.hypertests),
            "{target}"
        );
        assert_eq!(a.oracle, b.oracle, "{target}");
        let qa: Vec<_> = a
            .queue
            .iter()
            .map(|e| (&e.input, e.discovered_at))
            .collect();
        let qb: Vec<_> = b
            .queue
            .iter()
            .map(|e| (&e.input, e.discovered_at))
            .collect();
        assert_eq!(qa, qb, "{target}");
    }
}

#[test]
fn different_seeds_diverge() {
    let a = run_campaign(config("builtin:sumSafe", 5_000, 1)).unwrap();
    let b = run_campaign(config("builtin:sumSafe", 5_000, 2)).unwrap();
    assert_ne!(a.oracle.new_public_keys, b.oracle.new_public_keys);
}

#[test]
fn accounting_holds_for_every_builtin() {
    for b in hyperfuzz::targets::BUILTINS {
        let o = run_campaign(config(&format!("builtin:{}", b.name), 30_000, 3)).unwrap();
        audit(&o, 100);
        assert_eq!(o.stats.execs, 30_000, "{}", b.name);
        if b.expected_leak() {
            assert!(o.stats.confirmed > 0, "{} found nothing", b.name);
        } else {
            assert_eq!(o.stats.confirmed, 0, "{}", b.name);
        }
    }
}

#[test]
fn accounting_with_short_checks() {
    for reruns in [1, 2, 7] {
        let mut c = config("builtin:flakyCounter", 5_000, 5);
        c.flaky_reruns = reruns;
        let o = run_campaign(c).unwrap();
        audit(&o, reruns as u64);
    }
}

#[test]
fn output_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("seeds");
    fs::create_dir(&seeds).unwrap();
    let seed = HyperInput::new(b"pub".to_vec(), vec![1]);
    fs::write(seeds.join("a"), encode(&seed).unwrap()).unwrap();
    fs::write(seeds.join("b"), b"\x01").unwrap(); // short header decodes too

    let out = dir.path().join("out");
    let mut c = config("builtin:isLarge", 2_000, 9);
    c.out_dir = Some(out.clone());
    c.seed_dir = Some(seeds);
    let o = run_campaign(c).unwrap();

    assert_eq!(o.queue[0].input, seed);
    assert_eq!(o.queue[0].discovered_at, 0);
    assert_eq!(o.queue[1].discovered_at, 1);
    let queued = fs::read_dir(out.join("queue")).unwrap().count();
    assert_eq!(queued, o.queue.len());
    assert!(out.join("crashes").is_dir());
    assert!(out.join("fuzzer_setup.json").is_file());

    let report: Vec<_> = read_report(out.join("hypertests.jsonl"))
        .unwrap()
        .into_iter()
        .map(Result::unwrap)
        .collect();
    assert_eq!(report, o.hypertests);
    assert!(!report.is_empty());

    let stats = fs::read_to_string(out.join("stats.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(stats.lines().last().unwrap()).unwrap();
    assert_eq!(last["execs"], 2_000);
}
