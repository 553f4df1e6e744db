//! Voted-file records and their linkage to reporting units.
//!
//! Linkage is an exact join on quasi-identifiers. When the voted file only
//! distinguishes mail from "in person or provisional", units split by method
//! are compared at that merged level and the report says so.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ballot::{normalize_code, Election, VoteMethod};
use crate::error::{Error, Result};
use crate::units::{Dimension, Granularity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseMethod {
    Mail,
    InPersonOrProvisional,
    InPerson,
    Provisional,
}

impl CoarseMethod {
    pub fn parse(raw: &str) -> Result<CoarseMethod> {
        match normalize_code(raw).as_str() {
            "mail" => Ok(CoarseMethod::Mail),
            "in_person_or_provisional" | "in_person/provisional" => {
                Ok(CoarseMethod::InPersonOrProvisional)
            }
            "in_person" | "in-person" => Ok(CoarseMethod::InPerson),
            "provisional" => Ok(CoarseMethod::Provisional),
            other => Err(Error::InvalidRecord(format!("unknown voted-file method `{other}`"))),
        }
    }

    fn label(self, merged: bool) -> &'static str {
        match self {
            CoarseMethod::Mail => "mail",
            CoarseMethod::InPerson if !merged => "in_person",
            CoarseMethod::Provisional if !merged => "provisional",
            _ => MERGED,
        }
    }
}

const MERGED: &str = "in_person_or_provisional";

fn ballot_method_label(method: &VoteMethod, merged: bool) -> &str {
    match method {
        VoteMethod::InPerson | VoteMethod::Provisional if merged => MERGED,
        m => m.label(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VotedRecord {
    pub voter_id: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub address: Option<String>,
    pub precinct: String,
    #[serde(default)]
    pub ballot_style: Option<String>,
    pub vote_method: CoarseMethod,
}

#[derive(Deserialize)]
struct VotedRow {
    voter_id: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    address: String,
    precinct: String,
    #[serde(default)]
    ballot_style: String,
    vote_method: String,
}

fn non_empty(s: String) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Parse a delimited voted file with columns
/// `voter_id,name,address,precinct,ballot_style,vote_method`.
pub fn read_voted_file<R: Read>(reader: R, delimiter: u8) -> Result<Vec<VotedRecord>> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(reader);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.deserialize() {
        let row: VotedRow = row?;
        let voter_id = row.voter_id.trim().to_string();
        if voter_id.is_empty() || !seen.insert(voter_id.clone()) {
            return Err(Error::InvalidRecord(format!("duplicate or empty voter id `{voter_id}`")));
        }
        let precinct = normalize_code(&row.precinct);
        if precinct.is_empty() {
            return Err(Error::InvalidRecord(format!("voter `{voter_id}` has no precinct")));
        }
        out.push(VotedRecord {
            voter_id,
            name: non_empty(row.name),
            address: non_empty(row.address),
            precinct,
            ballot_style: non_empty(row.ballot_style).map(|s| normalize_code(&s)),
            vote_method: CoarseMethod::parse(&row.vote_method)?,
        });
    }
    Ok(out)
}

pub fn load_voted_file(path: &Path) -> Result<Vec<VotedRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let delimiter = if path.extension().is_some_and(|e| e == "tsv") { b'\t' } else { b',' };
    read_voted_file(file, delimiter)
}

pub fn write_voted_file<W: std::io::Write>(voted: &[VotedRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["voter_id", "name", "address", "precinct", "ballot_style", "vote_method"])?;
    for v in voted {
        w.write_record([
            v.voter_id.as_str(),
            v.name.as_deref().unwrap_or(""),
            v.address.as_deref().unwrap_or(""),
            &v.precinct,
            v.ballot_style.as_deref().unwrap_or(""),
            v.vote_method.label(false),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<voted output>", e))?;
    Ok(())
}

/// Derives a voter's ballot style from the address, falling back to the precinct.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleMap {
    pub by_address: BTreeMap<String, String>,
    pub by_precinct: BTreeMap<String, String>,
}

impl StyleMap {
    pub fn style_for(&self, voter: &VotedRecord) -> Option<String> {
        if let Some(s) = &voter.ballot_style {
            return Some(s.clone());
        }
        voter
            .address
            .as_ref()
            .and_then(|a| self.by_address.get(a.trim()))
            .or_else(|| self.by_precinct.get(&voter.precinct))
            .map(|s| normalize_code(s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStatus {
    Exact,
    Excess,
    Shortfall,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitLinkage {
    pub key: Vec<String>,
    pub ballots: usize,
    pub matched_voters: Vec<String>,
    pub status: MatchStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkageReport {
    pub granularity: Granularity,
    /// Vote method was compared at the merged in-person/provisional level.
    pub degraded_to_coarse: bool,
    pub units: Vec<UnitLinkage>,
    pub exact_units: usize,
    pub excess_units: usize,
    pub shortfall_units: usize,
    /// Sum over units of ballots minus matched voters, where positive.
    pub shortfall_slots: usize,
    pub excess_slots: usize,
    /// Voters whose key matches no unit of ballots.
    pub unmatched_voters: Vec<String>,
    /// Voters whose ballot style could not be determined.
    pub unresolved_style: Vec<String>,
}

/// Join the voted file to the election's units at `granularity`.
pub fn link_voted_file(
    election: &Election,
    granularity: &Granularity,
    voted: &[VotedRecord],
    style_map: Option<&StyleMap>,
) -> LinkageReport {
    let dims = granularity.dims();
    let degraded = granularity.has(Dimension::Method)
        && voted
            .iter()
            .any(|v| v.vote_method == CoarseMethod::InPersonOrProvisional);
    let empty_map = StyleMap::default();
    let style_map = style_map.unwrap_or(&empty_map);

    let mut units: BTreeMap<Vec<String>, (usize, Vec<String>)> = BTreeMap::new();
    for b in 0..election.n_ballots() {
        let key: Vec<String> = dims
            .iter()
            .map(|d| match d {
                Dimension::Precinct => election.precinct(b).to_string(),
                Dimension::Style => election.ballot_style(b).to_string(),
                Dimension::Method => ballot_method_label(election.vote_method(b), degraded).to_string(),
            })
            .collect();
        units.entry(key).or_default().0 += 1;
    }

    let mut unmatched = Vec::new();
    let mut unresolved = Vec::new();
    for v in voted {
        let mut key = Vec::with_capacity(dims.len());
        let mut resolved = true;
        for d in &dims {
            match d {
                Dimension::Precinct => key.push(v.precinct.clone()),
                Dimension::Style => match style_map.style_for(v) {
                    Some(s) => key.push(s),
                    None => resolved = false,
                },
                Dimension::Method => key.push(v.vote_method.label(degraded).to_string()),
            }
        }
        if !resolved {
            unresolved.push(v.voter_id.clone());
            continue;
        }
        match units.get_mut(&key) {
            Some(entry) => entry.1.push(v.voter_id.clone()),
            None => unmatched.push(v.voter_id.clone()),
        }
    }

    let mut report = LinkageReport {
        granularity: granularity.clone(),
        degraded_to_coarse: degraded,
        units: Vec::with_capacity(units.len()),
        exact_units: 0,
        excess_units: 0,
        shortfall_units: 0,
        shortfall_slots: 0,
        excess_slots: 0,
        unmatched_voters: unmatched,
        unresolved_style: unresolved,
    };
    for (key, (ballots, matched)) in units {
        let status = match matched.len().cmp(&ballots) {
            std::cmp::Ordering::Equal => MatchStatus::Exact,
            std::cmp::Ordering::Greater => MatchStatus::Excess,
            std::cmp::Ordering::Less => MatchStatus::Shortfall,
        };
        match status {
            MatchStatus::Exact => report.exact_units += 1,
            MatchStatus::Excess => {
                report.excess_units += 1;
                report.excess_slots += matched.len() - ballots;
            }
            MatchStatus::Shortfall => {
                report.shortfall_units += 1;
                report.shortfall_slots += ballots - matched.len();
            }
        }
        report.units.push(UnitLinkage {
            key,
            ballots,
            matched_voters: matched,
            status,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballot::{CastVoteRecord, ContestSpec};

    fn election() -> Election {
        let methods = [
            VoteMethod::Mail,
            VoteMethod::Mail,
            VoteMethod::InPerson,
            VoteMethod::Provisional,
        ];
        let records = methods.iter().enumerate().map(|(i, m)| CastVoteRecord {
            ballot_id: format!("b{i}"),
            precinct: "p1".into(),
            ballot_style: "s1".into(),
            vote_method: m.clone(),
            marks: Default::default(),
        });
        Election::from_records(vec![ContestSpec::new("c", &["a", "b"])], records).unwrap()
    }

    fn voter(id: &str, method: CoarseMethod, style: Option<&str>) -> VotedRecord {
        VotedRecord {
            voter_id: id.into(),
            name: None,
            address: Some(format!("{id} main st")),
            precinct: "p1".into(),
            ballot_style: style.map(String::from),
            vote_method: method,
        }
    }

    #[test]
    fn fine_roster_matches_exactly() {
        use CoarseMethod::*;
        let roster = vec![
            voter("v0", Mail, Some("s1")),
            voter("v1", Mail, Some("s1")),
            voter("v2", InPerson, Some("s1")),
            voter("v3", Provisional, Some("s1")),
        ];
        let r = link_voted_file(&election(), &Granularity::BallotEquivalent, &roster, None);
        assert!(!r.degraded_to_coarse);
        assert_eq!(r.exact_units, 3);
        assert_eq!(r.shortfall_slots, 0);
    }

    #[test]
    fn coarse_roster_degrades_to_merged_method() {
        use CoarseMethod::*;
        let roster = vec![
            voter("v0", Mail, Some("s1")),
            voter("v1", Mail, Some("s1")),
            voter("v2", InPersonOrProvisional, Some("s1")),
            voter("v3", InPersonOrProvisional, Some("s1")),
        ];
        let r = link_voted_file(&election(), &Granularity::BallotEquivalent, &roster, None);
        assert!(r.degraded_to_coarse);
        assert_eq!(r.units.len(), 2);
        assert_eq!(r.exact_units, 2);
        assert!(r.units.iter().any(|u| u.key[2] == MERGED && u.ballots == 2));
    }

    #[test]
    fn style_derived_from_map_and_missing_voters_reported() {
        use CoarseMethod::*;
        let mut map = StyleMap::default();
        map.by_precinct.insert("p1".into(), "S1".into());
        let roster = vec![voter("v0", Mail, None), voter("v2", InPerson, None)];
        let r = link_voted_file(&election(), &Granularity::BallotEquivalent, &roster, Some(&map));
        assert_eq!(r.shortfall_slots, 2);
        assert!(r.unresolved_style.is_empty());
        let r = link_voted_file(&election(), &Granularity::BallotEquivalent, &roster, None);
        assert_eq!(r.unresolved_style.len(), 2);
    }

    #[test]
    fn voted_file_csv_round_trip() {
        let roster = vec![voter("v0", CoarseMethod::Mail, Some("s1"))];
        let mut buf = Vec::new();
        write_voted_file(&roster, &mut buf).unwrap();
        assert_eq!(read_voted_file(buf.as_slice(), b',').unwrap(), roster);
        let dup = format!("{}v0,,,p1,,mail\n", String::from_utf8(buf).unwrap());
        assert!(read_voted_file(dup.as_bytes(), b',').is_err());
    }
}
