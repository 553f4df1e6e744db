//! Ballots touched by small-unit redaction on a synthetic county, and a
//! differential privacy check of winner-only reporting.
//!
//!     cargo run --release --example redaction_tradeoff

use voterev::policy::{dp_feasibility_check, flip_rate, tradeoff_curve, Mechanism, RedactionAction};
use voterev::revelation::RevelationOptions;
use voterev::synth::{generate, SynthSpec};
use voterev::units::Granularity;

fn main() -> voterev::Result<()> {
    let mut spec = SynthSpec::random(2020, 400, 1, 80, 12);
    spec.truth.enabled = false;
    let election = generate(&spec)?.election;
    let ks: Vec<usize> = (0..=30).step_by(3).collect();
    let curve = tradeoff_curve(
        &election,
        &Granularity::BallotEquivalent,
        &ks,
        RedactionAction::MergeIntoParentUnit,
        &RevelationOptions::default(),
    )?;
    println!("{} ballots, {} revealed before redaction", election.n_ballots(), curve[0].revelations_before);
    println!("  k  still revealed  redacted vulnerable  redacted other");
    for o in &curve {
        println!(
            "{:>3} {:>15} {:>20} {:>15}",
            o.k, o.revelations_after, o.ballots_redacted_vulnerable, o.ballots_redacted_not_vulnerable
        );
    }

    for margin in [1, 5] {
        let v = dp_feasibility_check(Mechanism::UniformNoise { magnitude: 3 }, margin, 1.0)?;
        println!("noise +/-3, margin {margin}: feasible at eps=1? {}", v.feasible);
    }
    println!("leader flips with +/-2 noise and a margin of 1: {:.3}", flip_rate(50, 1, 2, 10_000, 7));
    Ok(())
}
