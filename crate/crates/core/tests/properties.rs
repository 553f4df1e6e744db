use std::collections::BTreeSet;

use proptest::prelude::*;

use voterev::canvass::{tally, validate_against_canvass};
use voterev::geo::{within_radius, Centroids, Metric, PrecinctCentroid};
use voterev::ingest::{ingest_reader, write_cvr, FormatDescriptor, Layout};
use voterev::model::{enumerate_exact, expected_public, simulate_revelation, ModelParams};
use voterev::policy::{apply_noising, apply_redaction, NoisingSpec, RedactionAction, RedactionPolicy};
use voterev::revelation::{RevelationEngine, RevelationOptions};
use voterev::synth::{generate, SynthSpec};
use voterev::units::{build_reporting_units, Granularity};

fn small_election(seed: u64) -> voterev::ballot::Election {
    let mut spec = SynthSpec::random(seed, 6, 1, 12, 3);
    spec.truth.enabled = false;
    generate(&spec).unwrap().election
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cvr_round_trips_through_every_layout(seed in 0u64..10_000, layout in 0usize..3) {
        let e = small_election(seed);
        let layout = [Layout::Long, Layout::Wide, Layout::Jsonl][layout];
        let desc = FormatDescriptor::new(layout).with_contests(e.contests().to_vec());
        let mut buf = Vec::new();
        write_cvr(&e, &desc, &mut buf).unwrap();
        let (back, report) = ingest_reader(buf.as_slice(), &desc, "mem").unwrap();
        prop_assert_eq!(report.rejected.len(), 0);
        prop_assert!(e.records().eq(back.records()));
    }

    #[test]
    fn synthetic_tallies_validate(seed in 0u64..10_000) {
        let mut spec = SynthSpec::random(seed, 5, 1, 10, 3);
        spec.truth.enabled = false;
        let out = generate(&spec).unwrap();
        prop_assert_eq!(&tally(&out.election), &out.certified);
        prop_assert!(validate_against_canvass(&out.election, &out.certified).pass);
    }

    #[test]
    fn units_partition_ballots(seed in 0u64..10_000) {
        let e = small_election(seed);
        for g in [Granularity::Precinct, Granularity::PrecinctMethod, Granularity::PrecinctStyle, Granularity::BallotEquivalent] {
            let units = build_reporting_units(&e, &g);
            let mut seen: Vec<u32> = (0..units.len()).flat_map(|u| units.members(u).to_vec()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..e.n_ballots() as u32).collect::<Vec<_>>());
        }
        // refining a granularity never merges units
        let coarse = build_reporting_units(&e, &Granularity::Precinct);
        let fine = build_reporting_units(&e, &Granularity::BallotEquivalent);
        prop_assert!(fine.len() >= coarse.len());
        for u in 0..fine.len() {
            let owners: BTreeSet<usize> = fine.members(u).iter().map(|&b| coarse.unit_of(b as usize)).collect();
            prop_assert_eq!(owners.len(), 1);
        }
    }

    #[test]
    fn public_revelation_never_decreases_with_refinement(seed in 0u64..10_000) {
        let e = small_election(seed);
        let count = |g: Granularity| {
            let units = build_reporting_units(&e, &g);
            let f = RevelationEngine::new(&e, &units, RevelationOptions::default()).public();
            f.iter().map(|f| (f.ballot, f.contest)).collect::<BTreeSet<_>>()
        };
        // a unanimous unit stays unanimous when split
        prop_assert!(count(Granularity::Precinct).is_subset(&count(Granularity::BallotEquivalent)));
    }

    #[test]
    fn redaction_publishes_each_ballot_once(seed in 0u64..10_000, k in 0usize..15, action in 0usize..3) {
        let e = small_election(seed);
        let action = [
            RedactionAction::MergeIntoParentUnit,
            RedactionAction::SuppressChoiceCounts,
            RedactionAction::SuppressQuasiIdentifier,
        ][action];
        let r = apply_redaction(&e, &Granularity::BallotEquivalent, &RedactionPolicy { k, action }, &RevelationOptions::default());
        let mut all: Vec<u32> = r.published.iter().flat_map(|p| p.ballots.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..e.n_ballots() as u32).collect::<Vec<_>>());
        let o = &r.outcome;
        prop_assert!(o.revelations_after <= o.revelations_before);
        prop_assert!(o.ballots_redacted_vulnerable + o.ballots_redacted_not_vulnerable <= o.total_ballots);
    }

    #[test]
    fn noise_stays_within_magnitude(seed in 0u64..10_000, m in 0u32..4) {
        let e = small_election(seed);
        let units = build_reporting_units(&e, &Granularity::PrecinctMethod);
        let engine = RevelationEngine::new(&e, &units, RevelationOptions::default());
        let out = apply_noising(engine.tallies(), &NoisingSpec { magnitude: m, epsilon: None }, seed);
        for c in &out.counts {
            prop_assert!(c.noised_count.abs_diff(c.true_count) <= m as u64);
        }
        if m == 0 {
            prop_assert!(out.fidelity.flips.is_empty());
        }
    }

    #[test]
    fn radius_sets_grow(points in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..25), r1 in 0.0f64..6.0, dr in 0.0f64..6.0) {
        let c = Centroids::new(
            Metric::Planar,
            points.iter().enumerate().map(|(i, (x, y))| PrecinctCentroid { precinct: format!("p{i}"), lat: *x, lon: *y }),
        ).unwrap();
        let small = within_radius(&c, "p0", r1).unwrap();
        let big = within_radius(&c, "p0", r1 + dr).unwrap();
        prop_assert!(small.contains("p0"));
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn model_ignores_candidate_order(raw in prop::collection::vec(0.05f64..1.0, 2..4), n in 1u64..7, s in 0.0f64..0.6) {
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let mut rev = w.clone();
        rev.reverse();
        let a = ModelParams::new(n, &w, s, 0).unwrap();
        let b = ModelParams::new(n, &rev, s, 0).unwrap();
        prop_assert!((expected_public(&a).unwrap() - expected_public(&b).unwrap()).abs() < 1e-12);
        prop_assert!((enumerate_exact(&a).unwrap() - expected_public(&a).unwrap()).abs() < 1e-12);
        prop_assert!(expected_public(&a).unwrap() <= n as f64 + 1e-12);
    }
}

#[test]
fn simulation_is_seeded() {
    let p = ModelParams::new(6, &[0.6, 0.4], 0.1, 1).unwrap();
    assert_eq!(simulate_revelation(&p, 500, 11).unwrap(), simulate_revelation(&p, 500, 11).unwrap());
}

#[test]
fn synthetic_generation_is_seeded() {
    let a = small_election(42);
    let b = small_election(42);
    assert!(a.records().eq(b.records()));
}
