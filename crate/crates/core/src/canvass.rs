//! Comparison of cast vote record tallies against certified totals.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ballot::{normalize_code, Election};
use crate::error::{Error, Result};

/// contest id -> choice id -> certified vote count.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertifiedTotals {
    pub totals: BTreeMap<String, BTreeMap<String, u64>>,
}

impl CertifiedTotals {
    pub fn from_toml_str(text: &str) -> Result<CertifiedTotals> {
        let raw: CertifiedTotals = toml::from_str(text)?;
        let totals = raw
            .totals
            .into_iter()
            .map(|(c, choices)| {
                let choices = choices
                    .into_iter()
                    .map(|(k, v)| (normalize_code(&k), v))
                    .collect();
                (normalize_code(&c), choices)
            })
            .collect();
        Ok(CertifiedTotals { totals })
    }

    pub fn load(path: &Path) -> Result<CertifiedTotals> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("totals serialize")
    }
}

/// Candidate-vote tally of every contest in the election.
pub fn tally(election: &Election) -> CertifiedTotals {
    let mut counts: Vec<Vec<u64>> = election
        .contests()
        .iter()
        .map(|c| vec![0; c.choices.len()])
        .collect();
    for b in 0..election.n_ballots() {
        for (c, code) in election.marks_row(b).iter().enumerate() {
            if let Some(i) = code.candidate_index() {
                counts[c][i] += 1;
            }
        }
    }
    let totals = election
        .contests()
        .iter()
        .zip(counts)
        .map(|(spec, row)| {
            let choices = spec.choices.iter().cloned().zip(row).collect();
            (spec.id.clone(), choices)
        })
        .collect();
    CertifiedTotals { totals }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub contest: String,
    pub choice: String,
    pub cvr: u64,
    pub certified: u64,
    /// cvr - certified
    pub difference: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub compared: usize,
    /// Only nonzero differences are listed.
    pub discrepancies: Vec<Discrepancy>,
    /// Contested contests in the CVR that the certified totals do not cover.
    pub uncovered_contests: Vec<String>,
}

/// Exact integer comparison of CVR tallies with certified totals.
pub fn validate_against_canvass(election: &Election, certified: &CertifiedTotals) -> ValidationReport {
    let cvr = tally(election);
    let mut discrepancies = Vec::new();
    let mut uncovered = Vec::new();
    let mut compared = 0;
    for spec in election.contests() {
        let ours = &cvr.totals[&spec.id];
        let Some(theirs) = certified.totals.get(&spec.id) else {
            if spec.contested() {
                uncovered.push(spec.id.clone());
            }
            continue;
        };
        let mut choices: Vec<&String> = ours.keys().chain(theirs.keys()).collect();
        choices.sort();
        choices.dedup();
        for choice in choices {
            compared += 1;
            let a = ours.get(choice).copied().unwrap_or(0);
            let b = theirs.get(choice).copied().unwrap_or(0);
            if a != b {
                discrepancies.push(Discrepancy {
                    contest: spec.id.clone(),
                    choice: choice.clone(),
                    cvr: a,
                    certified: b,
                    difference: a as i64 - b as i64,
                });
            }
        }
    }
    ValidationReport {
        pass: discrepancies.is_empty() && uncovered.is_empty(),
        compared,
        discrepancies,
        uncovered_contests: uncovered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballot::{CastVoteRecord, ContestSpec, Mark, VoteMethod};

    fn election(votes: &[&str]) -> Election {
        let records = votes.iter().enumerate().map(|(i, v)| CastVoteRecord {
            ballot_id: format!("b{i}"),
            precinct: "p".into(),
            ballot_style: "s".into(),
            vote_method: VoteMethod::Mail,
            marks: [("pres".to_string(), Mark::Candidate(v.to_string()))].into(),
        });
        Election::from_records(
            vec![
                ContestSpec::new("pres", &["a", "b"]),
                ContestSpec::new("gov", &["x", "y"]),
            ],
            records,
        )
        .unwrap()
    }

    #[test]
    fn self_tally_passes() {
        let e = election(&["a", "a", "b"]);
        let report = validate_against_canvass(&e, &tally(&e));
        assert!(report.pass);
        assert!(report.discrepancies.is_empty());
    }

    #[test]
    fn one_flipped_vote_gives_two_discrepancies() {
        let e = election(&["a", "a", "b"]);
        let flipped = election(&["a", "b", "b"]);
        let report = validate_against_canvass(&flipped, &tally(&e));
        assert!(!report.pass);
        let diffs: Vec<i64> = report.discrepancies.iter().map(|d| d.difference).collect();
        assert_eq!(diffs, vec![-1, 1]);
        assert!(report.discrepancies.iter().all(|d| d.contest == "pres"));
    }

    #[test]
    fn uncovered_contest_fails() {
        let e = election(&["a"]);
        let mut certified = tally(&e);
        certified.totals.remove("gov");
        let report = validate_against_canvass(&e, &certified);
        assert!(!report.pass);
        assert_eq!(report.uncovered_contests, vec!["gov"]);
    }

    #[test]
    fn totals_toml_round_trip() {
        let e = election(&["a", "b"]);
        let t = tally(&e);
        let back = CertifiedTotals::from_toml_str(&t.to_toml_string()).unwrap();
        assert_eq!(back, t);
    }
}
