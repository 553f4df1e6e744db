//! How closely publicly revealed votes match their neighbours at growing radii.
//!
//!     cargo run --example geo_agreement

use voterev::geo::{agreement_curve, Centroids, Denominator, Metric, PrecinctCentroid};
use voterev::revelation::{RevelationEngine, RevelationOptions};
use voterev::synth::{generate, SynthSpec};
use voterev::units::{build_reporting_units, Granularity};

fn main() -> voterev::Result<()> {
    let mut spec = SynthSpec::random(11, 60, 1, 30, 2);
    spec.truth.enabled = false;
    let election = generate(&spec)?.election;

    // precincts on a small grid, one mile apart
    let mut precincts: Vec<String> = (0..election.n_ballots()).map(|b| election.precinct(b).to_string()).collect();
    precincts.sort();
    precincts.dedup();
    let per_degree = voterev::geo::EARTH_RADIUS_MILES.to_radians();
    let centroids = Centroids::new(
        Metric::Haversine,
        precincts.iter().enumerate().map(|(i, p)| PrecinctCentroid {
            precinct: p.clone(),
            lat: 33.0 + (i / 8) as f64 / per_degree,
            lon: -112.0 + (i % 8) as f64 / per_degree,
        }),
    )?;

    let units = build_reporting_units(&election, &Granularity::BallotEquivalent);
    let public = RevelationEngine::new(&election, &units, RevelationOptions::default()).public();
    let contest = election.contests()[0].id.clone();
    let radii = [0.0, 1.0, 2.0, 4.0, 8.0];
    let curve = agreement_curve(&public, &election, &units, &contest, &centroids, &radii, Denominator::CandidateVotes)?;
    println!("contest {contest}: mean agreement of revealed voters with everyone within r miles");
    for m in &curve.means {
        println!("  {:<4} r={:<4} {:.3} (weight {})", m.revealed_choice, m.radius, m.agreement, m.weight);
    }
    Ok(())
}
