//! Generate a synthetic election from a spec, write it to disk and check the
//! engine against the generator's ground truth.
//!
//!     cargo run --example synthetic_election -- /tmp/synth

use std::path::PathBuf;

use voterev::ingest::Layout;
use voterev::revelation::{RevelationEngine, RevelationKind, RevelationOptions};
use voterev::synth::{emit, generate, SynthSpec};
use voterev::units::{build_reporting_units, Granularity};

const SPEC: &str = r#"
seed = 17

[[contests]]
id = "governor"
choices = ["lee", "park"]
federal = true
w = [0.6, 0.4]
s = 0.03

[[contests]]
id = "measure_1"
choices = ["yes", "no"]
s = 0.1
concentration = 5.0

[random_precincts]
count = 40
min_size = 1
max_size = 50
styles = 2
federal_only_rate = 0.02

[[units]]
precinct = "p00001"
style = "s1"
method = "provisional"
ballots = 3
marks = { governor = { park = 3 }, measure_1 = { yes = 2, no = 1 } }

[[planted]]
unit = "p00001|s1|provisional"
contest = "measure_1"
choice = "no"
"#;

fn main() -> voterev::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let spec = SynthSpec::from_toml_str(SPEC)?;
    let out = generate(&spec)?;
    let files = emit(&out, &dir, Layout::Long)?;
    println!("{} ballots written to {}", out.election.n_ballots(), files.cvr.display());

    let g = Granularity::BallotEquivalent;
    let units = build_reporting_units(&out.election, &g);
    let found = RevelationEngine::new(&out.election, &units, RevelationOptions::default()).public();
    let truth = out.truth_for(&g, RevelationKind::Public).expect("truth enabled");
    let same = found.iter().map(|f| (f.ballot, f.contest, f.revealed)).eq(truth.findings.iter().copied());
    println!("{} public findings, ground truth agrees: {same}", found.len());
    Ok(())
}
