//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL|SKIP` line.
//!
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1`.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use voterev::ballot::{ContestSpec, Election, MarkCode, QuasiIds, VoteMethod};
use voterev::cli::{cmd_analyze, load_election, Bundle, RunConfig};
use voterev::ingest::{ingest_cvr, FormatDescriptor, Layout};
use voterev::model::{enumerate_exact, expected_local, expected_public, tipping_point, ModelParams};
use voterev::policy::{apply_redaction, tradeoff_curve, RedactionAction, RedactionPolicy};
use voterev::revelation::reference::pairwise_findings;
use voterev::revelation::{
    any_contest_summary, decompose_by, group_findings, revealed_ballots, unit_findings_from_tallies,
    write_unit_findings, ContestExclusions, Decomposition, RevelationEngine, RevelationFinding, RevelationKind,
    RevelationOptions, Share, StyleClassifier,
};
use voterev::synth::{emit, generate, RandomPrecincts, SynthContest, SynthSpec};
use voterev::units::{build_reporting_units, Granularity};

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn keyed(findings: &[RevelationFinding]) -> BTreeSet<(u32, u16, MarkCode)> {
    findings.iter().map(|f| (f.ballot, f.contest, f.revealed)).collect()
}

fn pairs(findings: &[RevelationFinding]) -> BTreeSet<(u32, u16)> {
    findings.iter().map(|f| (f.ballot, f.contest)).collect()
}

#[test]
fn criterion_01_tipping_points() {
    let start = Instant::now();
    let a = tipping_point(&[0.7, 0.3], 0.0, 0.01, 10_000).unwrap();
    let b = tipping_point(&[0.7, 0.3], 0.0, 0.001, 10_000).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = a == 22 && b == 29 && secs < 1.0;
    report(1, ok, &format!("N*(0.01) = {a}, N*(0.001) = {b}, {secs:.3} s"));
    assert!(ok);
}

/// Support vectors on a grid of step 1/10.
fn simplex(h: usize) -> Vec<Vec<f64>> {
    fn rec(h: usize, left: u32, acc: &mut Vec<u32>, out: &mut Vec<Vec<f64>>) {
        if acc.len() == h - 1 {
            let mut w: Vec<f64> = acc.iter().map(|&t| t as f64 / 10.0).collect();
            w.push(left as f64 / 10.0);
            out.push(w);
            return;
        }
        for t in 0..=left {
            acc.push(t);
            rec(h, left - t, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    rec(h, 10, &mut Vec::new(), &mut out);
    out
}

#[test]
fn criterion_02_closed_forms_match_enumeration() {
    let start = Instant::now();
    let (mut cases, mut worst) = (0u64, 0.0f64);
    for n in 1..=8u64 {
        for h in 1..=3 {
            for w in simplex(h) {
                // exact decimal sums can drift by an ulp
                let total: f64 = w.iter().sum();
                let w: Vec<f64> = w.iter().map(|x| x / total).collect();
                for s in [0.0, 0.2, 0.5] {
                    for alpha in 0..=(n - 1) / 2 {
                        let p = ModelParams::new(n, &w, s, alpha).unwrap();
                        let closed = if alpha == 0 {
                            expected_public(&p).unwrap()
                        } else {
                            expected_local(&p).unwrap()
                        };
                        let exact = enumerate_exact(&p).unwrap();
                        worst = worst.max((closed - exact).abs());
                        cases += 1;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 1e-12 && secs < 60.0;
    report(2, ok, &format!("{cases} cases, max |closed - exact| = {worst:.3e}, {secs:.2} s"));
    assert!(ok);
}

#[test]
fn criterion_03_worked_example_fixture() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/worked_example");
    let desc = FormatDescriptor::load(&dir.join("format.toml")).unwrap();
    let (election, _) = ingest_cvr(&dir.join("cvr.csv"), &desc).unwrap();
    let units = build_reporting_units(&election, &Granularity::BallotEquivalent);
    let engine = RevelationEngine::new(&election, &units, RevelationOptions::default());
    let public = engine.public();
    let local = engine.local(1);
    let president = election.contest_index("president").unwrap() as u16;
    let trump = MarkCode::candidate(election.contest(president as usize).choice_index("trump").unwrap());
    let in_unit = |fs: &[RevelationFinding], method: &str| {
        fs.iter().all(|f| {
            f.contest == president
                && f.revealed == trump
                && election.vote_method(f.ballot as usize).label() == method
        })
    };
    let ok = public.len() == 10 && local.len() == 19 && in_unit(&public, "in_person") && in_unit(&local, "mail");
    report(
        3,
        ok,
        &format!("{} public (in-person unit), {} local alpha=1 (mail unit)", public.len(), local.len()),
    );
    assert!(ok);
}

fn kinds() -> [RevelationKind; 5] {
    [
        RevelationKind::Public,
        RevelationKind::Local { alpha: 1 },
        RevelationKind::Local { alpha: 2 },
        RevelationKind::Probabilistic { threshold: Share(0.8) },
        RevelationKind::Probabilistic { threshold: Share(1.0) },
    ]
}

#[test]
fn criterion_04_aggregate_equals_individual() {
    let mut mismatches = 0;
    let mut bytes = 0usize;
    for seed in 0..200u64 {
        let spec = SynthSpec::random(seed, 12 + (seed % 20) as usize, 1, 15, 3 + (seed % 4) as usize);
        let mut spec = spec;
        spec.truth.enabled = false;
        let out = generate(&spec).unwrap();
        let e = &out.election;
        let units = build_reporting_units(e, &Granularity::BallotEquivalent);
        let engine = RevelationEngine::new(e, &units, RevelationOptions::default());
        let opts = RevelationOptions {
            count_all_abstain: seed % 2 == 1,
            ..Default::default()
        };
        for kind in kinds() {
            let mut agg = Vec::new();
            write_unit_findings(engine.tallies(), &unit_findings_from_tallies(engine.tallies(), kind, &opts), &mut agg)
                .unwrap();
            let mut ind = Vec::new();
            write_unit_findings(engine.tallies(), &group_findings(&pairwise_findings(e, &units, kind, &opts)), &mut ind)
                .unwrap();
            bytes += agg.len();
            if agg != ind {
                mismatches += 1;
            }
        }
    }
    let ok = mismatches == 0;
    report(4, ok, &format!("200 elections x 5 kinds, {mismatches} mismatches, {bytes} bytes compared"));
    assert!(ok);
}

fn single_unit(choices: usize, marks: &[u16]) -> Election {
    let names: Vec<String> = (0..choices).map(|i| format!("c{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut b = Election::builder(vec![ContestSpec::new("race", &refs)]).unwrap();
    let qi = QuasiIds {
        precinct: "p".into(),
        ballot_style: "s".into(),
        vote_method: VoteMethod::parse("mail"),
    };
    for (i, &m) in marks.iter().enumerate() {
        b.push_coded(&format!("b{i}"), &qi, &[MarkCode(m)]).unwrap();
    }
    b.finish()
}

#[test]
fn criterion_05_monotonicity() {
    let unit = (2usize..=4).prop_flat_map(|h| {
        // absent, undervote, overvote, write-in, then candidates
        let code = prop_oneof![
            1 => Just(0u16),
            2 => Just(1u16),
            1 => Just(2u16),
            1 => Just(3u16),
            12 => (0..h as u16).prop_map(|c| 4 + c),
        ];
        (Just(h), prop::collection::vec(code, 1..40), prop::bool::ANY)
    });
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&unit, |(h, marks, all_abstain)| {
        let e = single_unit(h, &marks);
        let units = build_reporting_units(&e, &Granularity::Precinct);
        let opts = RevelationOptions {
            count_all_abstain: all_abstain,
            ..Default::default()
        };
        let engine = RevelationEngine::new(&e, &units, opts);
        let public = pairs(&engine.public());
        let l1: BTreeSet<_> = public.union(&pairs(&engine.local(1))).copied().collect();
        let l2: BTreeSet<_> = l1.union(&pairs(&engine.local(2))).copied().collect();
        prop_assert!(public.is_subset(&l1) && l1.is_subset(&l2));
        let mut prev: Option<BTreeSet<(u32, u16)>> = None;
        for p in [0.5, 0.6, 0.75, 0.9, 0.95, 1.0] {
            let cur = pairs(&engine.probabilistic(p).unwrap());
            if let Some(prev) = &prev {
                prop_assert!(cur.is_subset(prev));
            }
            prev = Some(cur);
        }
        if !all_abstain {
            prop_assert_eq!(keyed(&engine.probabilistic(1.0).unwrap()), keyed(&engine.public()));
        }
        Ok(())
    });
    let ok = result.is_ok();
    report(5, ok, &format!("1000 random units{}", result.err().map(|e| format!(": {e}")).unwrap_or_default()));
    assert!(ok);
}

#[test]
fn criterion_06_redaction_soundness() {
    let mut spec = SynthSpec::random(6, 300, 1, 40, 8);
    spec.truth.enabled = false;
    let e = generate(&spec).unwrap().election;
    let g = Granularity::BallotEquivalent;
    let opts = RevelationOptions::default();
    let units = build_reporting_units(&e, &g);
    let public = RevelationEngine::new(&e, &units, opts.clone()).public();
    let k_max = public.iter().map(|f| f.unit_size as usize).max().unwrap();
    let at_max = apply_redaction(&e, &g, &RedactionPolicy { k: k_max, action: RedactionAction::MergeIntoParentUnit }, &opts);
    let ks: Vec<usize> = (0..=60).collect();
    let curve = tradeoff_curve(&e, &g, &ks, RedactionAction::MergeIntoParentUnit, &opts).unwrap();
    let monotone = curve.windows(2).all(|w| {
        w[0].ballots_redacted_vulnerable <= w[1].ballots_redacted_vulnerable
            && w[0].ballots_redacted_not_vulnerable <= w[1].ballots_redacted_not_vulnerable
            && w[0].revelations_after >= w[1].revelations_after
    });
    let o = &at_max.outcome;
    let ok = o.revelations_before > 0 && o.revelations_after == 0 && monotone;
    report(
        6,
        ok,
        &format!(
            "k = {k_max}: {} -> {} revealed, {} non-vulnerable redacted, curve monotone: {monotone}",
            o.revelations_before, o.revelations_after, o.ballots_redacted_not_vulnerable
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_ground_truth() {
    let mut spec = SynthSpec::random(7, 2600, 1, 30, 6);
    spec.truth.granularities = vec![Granularity::BallotEquivalent, Granularity::PrecinctMethod];
    spec.truth.alphas = vec![1, 2];
    spec.truth.thresholds = vec![0.9, 1.0];
    let out = generate(&spec).unwrap();
    let e = &out.election;
    let mut checked = 0;
    let mut mismatched = Vec::new();
    let mut n_units = 0;
    for g in &spec.truth.granularities {
        let units = build_reporting_units(e, g);
        if *g == Granularity::BallotEquivalent {
            n_units = units.len();
        }
        let engine = RevelationEngine::new(e, &units, RevelationOptions::default());
        let mut kinds = vec![RevelationKind::Public];
        kinds.extend(spec.truth.alphas.iter().map(|&alpha| RevelationKind::Local { alpha }));
        kinds.extend(spec.truth.thresholds.iter().map(|&t| RevelationKind::Probabilistic { threshold: Share(t) }));
        for kind in kinds {
            let truth = out.truth_for(g, kind).expect("truth generated");
            checked += 1;
            if keyed(&engine.findings(kind)) != truth.findings {
                mismatched.push(format!("{g}/{kind}"));
            }
        }
    }
    let ok = n_units >= 10_000 && mismatched.is_empty();
    report(
        7,
        ok,
        &format!("{n_units} ballot-equivalent units, {checked} finding sets compared, mismatched: {mismatched:?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_08_statistical_convergence() {
    let scenarios: [(&str, Vec<f64>, f64, usize); 3] = [
        ("two-way 70/30", vec![0.7, 0.3], 0.0, 5),
        ("conducive", vec![0.95, 0.05], 0.05, 10),
        ("opposite", vec![0.25; 4], 0.2, 3),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, (name, w, s, n)) in scenarios.iter().enumerate() {
        let names: Vec<String> = (0..w.len()).map(|c| format!("k{c}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut contest = SynthContest::new("race", &refs);
        contest.w = Some(w.clone());
        contest.s = *s;
        let mut spec = SynthSpec {
            seed: 800 + i as u64,
            contests: vec![contest],
            random_precincts: Some(RandomPrecincts {
                count: 100_000,
                min_size: *n,
                max_size: *n,
                styles: 1,
                federal_only_rate: 0.0,
            }),
            ..Default::default()
        };
        spec.truth.enabled = false;
        let e = generate(&spec).unwrap().election;
        let units = build_reporting_units(&e, &Granularity::Precinct);
        // the model counts unanimous abstention as revealing
        let opts = RevelationOptions {
            count_all_abstain: true,
            ..Default::default()
        };
        let public = RevelationEngine::new(&e, &units, opts).public();
        let mut per_unit = vec![0f64; units.len()];
        for f in &public {
            per_unit[f.unit as usize] += 1.0;
        }
        let m = per_unit.len() as f64;
        let mean = per_unit.iter().sum::<f64>() / m;
        let var = per_unit.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        let expected = expected_public(&ModelParams::new(*n as u64, w, *s, 0).unwrap()).unwrap();
        let z = (mean - expected).abs() / se;
        ok &= z <= 4.0;
        lines.push(format!("{name} N={n}: {mean:.5} vs {expected:.5} ({z:.2} SE)"));
    }
    report(8, ok, &format!("100000 units each; {}", lines.join("; ")));
    assert!(ok);
}

#[test]
fn criterion_09_performance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec::random(9, 20_000, 1, 99, 60);
    spec.truth.enabled = false;
    let out = generate(&spec).unwrap();
    let ballots = out.election.n_ballots();
    let files = emit(&out, tmp.path(), Layout::Wide).unwrap();
    drop(out);
    let mut cfg = RunConfig::default();
    cfg.input.cvr = Some(files.cvr.clone());
    cfg.input.format = Some(files.format.clone());
    cfg.out = tmp.path().join("report");
    let start = Instant::now();
    cmd_analyze(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ok = ballots >= 1_000_000 && secs < 120.0;
    report(9, ok, &format!("{ballots} ballots x 60 contests, three granularities, {secs:.1} s"));
    assert!(ok);
}

/// Needs the full county data; point `VOTEREV_FULL_DATA_CONFIG` at a run
/// configuration whose `[input]` names the CVR and its format descriptor.
#[test]
fn criterion_10_full_data() {
    let Some(path) = std::env::var_os("VOTEREV_FULL_DATA_CONFIG") else {
        println!("criterion 10: SKIP full county data not present (set VOTEREV_FULL_DATA_CONFIG)");
        return;
    };
    let cfg = RunConfig::load(Path::new(&path)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut bundle = Bundle::new(tmp.path(), "acceptance").unwrap();
    let (e, _) = load_election(&cfg, &mut bundle).unwrap();
    let opts = RevelationOptions::default();
    let n = e.n_ballots();
    let summary = |g: Granularity| {
        let units = build_reporting_units(&e, &g);
        let engine = RevelationEngine::new(&e, &units, opts.clone());
        let mut f = engine.public();
        f.extend(engine.local(1));
        f.extend(engine.local(2));
        f.extend(engine.probabilistic(0.95).unwrap());
        (any_contest_summary(&g, &f, n).unwrap(), engine.public(), units.len())
    };
    let (precinct, _, _) = summary(Granularity::Precinct);
    let (method, _, _) = summary(Granularity::PrecinctMethod);
    let (ballot, public, n_units) = summary(Granularity::BallotEquivalent);
    let inc = |kind: &str| precinct.row(kind).and_then(|r| r.increment_over_public);
    let prob = precinct.row("probabilistic:0.95").map(|r| r.voters);

    let classifier = StyleClassifier::infer(&e);
    let rows = decompose_by(
        &public,
        &e,
        &Decomposition::ProvisionalOrFederalOnly,
        Some(&classifier),
        &ContestExclusions::default(),
    )
    .unwrap();
    let flagged: usize = rows.iter().filter(|r| r.group == "provisional_or_federal_only").map(|r| r.revealed).sum();
    let redacted = apply_redaction(
        &e,
        &Granularity::BallotEquivalent,
        &RedactionPolicy { k: 31, action: RedactionAction::MergeIntoParentUnit },
        &opts,
    );
    let checks = [
        ("precinct public 19", precinct.public() == 19),
        ("local alpha=1 +56", inc("local:1") == Some(56)),
        ("local alpha=2 +81", inc("local:2") == Some(81)),
        ("probabilistic 0.95 51", prob == Some(51)),
        ("precinct_method public 1088", method.public() == 1088),
        ("ballot public 3492", ballot.public() == 3492 && revealed_ballots(&public).len() == 3492),
        ("ballot units 4397", n_units == 4397),
        ("provisional or federal-only 2996", flagged == 2996),
        ("k=31 leaves 0", redacted.outcome.revelations_after == 0),
        ("k=31 non-vulnerable > 11000", redacted.outcome.ballots_redacted_not_vulnerable > 11_000),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(10, failed.is_empty(), &format!("failed checks: {failed:?}"));
    assert!(failed.is_empty());
}
