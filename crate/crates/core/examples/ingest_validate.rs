//! Ingest a cast vote record with a format descriptor, check it against the
//! certified canvass and link it to the voted file.
//!
//!     cargo run --example ingest_validate

use std::path::Path;

use voterev::canvass::{validate_against_canvass, CertifiedTotals};
use voterev::ingest::{ingest_cvr, FormatDescriptor};
use voterev::units::{build_reporting_units, unit_size_ecdf, Granularity};
use voterev::voterfile::{link_voted_file, read_voted_file};

fn main() -> voterev::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/worked_example");
    let desc = FormatDescriptor::load(&dir.join("format.toml"))?;
    let (election, report) = ingest_cvr(&dir.join("cvr.csv"), &desc)?;
    println!(
        "{} rows, {} records, {} rejected, {} precincts",
        report.rows_read,
        report.records,
        report.rejected.len(),
        report.precincts
    );

    let certified = CertifiedTotals::load(&dir.join("certified.toml"))?;
    let v = validate_against_canvass(&election, &certified);
    println!("canvass check: {} ({} totals compared)", if v.pass { "pass" } else { "FAIL" }, v.compared);

    let units = build_reporting_units(&election, &Granularity::BallotEquivalent);
    for row in unit_size_ecdf(&units, &[5, 10, 20])? {
        println!("units of <= {:>2} ballots hold {:>6} voters per 100,000", row.threshold, row.rounded());
    }

    let voted = "voter_id,name,address,precinct,ballot_style,vote_method\n\
                 v1,A. Voter,1 Main St,a,x,mail\n\
                 v2,B. Voter,2 Main St,a,x,in_person\n";
    let voted = read_voted_file(voted.as_bytes(), b',')?;
    let link = link_voted_file(&election, &Granularity::BallotEquivalent, &voted, None);
    println!(
        "voted file: {} units exact, {} short of voters, {} unmatched voters",
        link.exact_units,
        link.shortfall_units,
        link.unmatched_voters.len()
    );
    Ok(())
}
