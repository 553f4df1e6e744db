//! Revelation counts for the 30-ballot worked example at three granularities.
//!
//!     cargo run --example revelation_tables

use voterev::revelation::{any_contest_summary, RevelationEngine, RevelationOptions};
use voterev::synth::{generate, SynthSpec};
use voterev::units::{build_reporting_units, Granularity};

fn main() -> voterev::Result<()> {
    let election = generate(&SynthSpec::worked_example())?.election;
    let n = election.n_ballots();
    for g in [Granularity::Precinct, Granularity::PrecinctMethod, Granularity::BallotEquivalent] {
        let units = build_reporting_units(&election, &g);
        let engine = RevelationEngine::new(&election, &units, RevelationOptions::default());
        let mut findings = engine.public();
        findings.extend(engine.local(1));
        findings.extend(engine.probabilistic(0.95)?);
        let summary = any_contest_summary(&g, &findings, n)?;
        println!("{g} ({} units)", units.len());
        for row in &summary.rows {
            let inc = row.increment_over_public.map(|i| format!(" (+{i} over public)")).unwrap_or_default();
            println!("  {:<20} {:>3} of {}{inc}", row.kind, row.voters, row.total_voters);
        }
    }

    // who exactly is exposed in the smallest units
    let units = build_reporting_units(&election, &Granularity::BallotEquivalent);
    let engine = RevelationEngine::new(&election, &units, RevelationOptions::default());
    if let Some(f) = engine.public().first() {
        let r = f.resolve(&election, &units);
        println!("e.g. ballot {} revealed as {} in {} ({} ballots)", r.ballot_id, r.revealed_choice, r.unit_key, r.unit_size);
    }
    Ok(())
}
