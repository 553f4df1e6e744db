//! Ballot-level domain types and the columnar election table.
//!
//! An [`Election`] stores every ballot's quasi-identifiers as interned codes
//! and its marks as a dense `ballots x contests` matrix of [`MarkCode`]s.
//! The per-ballot [`CastVoteRecord`] view is materialised on demand.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trim and lowercase a code before it is used as a key.
pub fn normalize_code(raw: &str) -> String {
    raw.trim().to_lowercase()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VoteMethod {
    Mail,
    InPerson,
    Provisional,
    Other(String),
}

impl VoteMethod {
    pub fn parse(raw: &str) -> VoteMethod {
        let code = normalize_code(raw);
        match code.as_str() {
            "mail" | "by_mail" | "absentee" | "early_mail" => VoteMethod::Mail,
            "in_person" | "in-person" | "inperson" | "election_day" => VoteMethod::InPerson,
            "provisional" => VoteMethod::Provisional,
            _ => VoteMethod::Other(code),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            VoteMethod::Mail => "mail",
            VoteMethod::InPerson => "in_person",
            VoteMethod::Provisional => "provisional",
            VoteMethod::Other(label) => label,
        }
    }
}

impl fmt::Display for VoteMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for VoteMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for VoteMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(VoteMethod::parse(&raw))
    }
}

/// What a ballot recorded for one contest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Candidate(String),
    Undervote,
    Overvote,
    Writein,
}

impl Mark {
    pub fn is_candidate(&self) -> bool {
        matches!(self, Mark::Candidate(_))
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            Mark::Candidate(_) => "candidate",
            Mark::Undervote => "undervote",
            Mark::Overvote => "overvote",
            Mark::Writein => "writein",
        }
    }
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mark::Candidate(choice) => f.write_str(choice),
            other => write!(f, "[{}]", other.kind_label()),
        }
    }
}

/// A contest as it appears on the ballot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContestSpec {
    pub id: String,
    #[serde(default)]
    pub title: String,
    /// Listed choices in ballot order; write-ins are never listed.
    pub choices: Vec<String>,
    #[serde(default = "default_vote_for")]
    pub vote_for: u32,
    /// Federal office; federal-only ballot styles carry only these.
    #[serde(default)]
    pub federal: bool,
}

fn default_vote_for() -> u32 {
    1
}

impl ContestSpec {
    pub fn new(id: &str, choices: &[&str]) -> ContestSpec {
        ContestSpec {
            id: normalize_code(id),
            title: id.to_string(),
            choices: choices.iter().map(|c| normalize_code(c)).collect(),
            vote_for: 1,
            federal: false,
        }
    }

    /// At least two listed choices.
    pub fn contested(&self) -> bool {
        self.choices.len() >= 2
    }

    pub fn single_winner(&self) -> bool {
        self.vote_for == 1
    }

    pub fn choice_index(&self, choice: &str) -> Option<usize> {
        self.choices.iter().position(|c| c == choice)
    }
}

/// Compact encoding of a [`Mark`] relative to one contest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MarkCode(pub u16);

impl MarkCode {
    /// The contest is not on this ballot.
    pub const ABSENT: MarkCode = MarkCode(0);
    pub const UNDERVOTE: MarkCode = MarkCode(1);
    pub const OVERVOTE: MarkCode = MarkCode(2);
    pub const WRITEIN: MarkCode = MarkCode(3);
    const FIRST_CANDIDATE: u16 = 4;

    pub fn candidate(choice_index: usize) -> MarkCode {
        MarkCode(Self::FIRST_CANDIDATE + choice_index as u16)
    }

    pub fn is_present(self) -> bool {
        self != Self::ABSENT
    }

    pub fn is_candidate(self) -> bool {
        self.0 >= Self::FIRST_CANDIDATE
    }

    pub fn candidate_index(self) -> Option<usize> {
        self.is_candidate()
            .then(|| (self.0 - Self::FIRST_CANDIDATE) as usize)
    }

    /// Number of distinct codes needed for a contest with `choices` listed choices.
    pub fn code_space(choices: usize) -> usize {
        Self::FIRST_CANDIDATE as usize + choices
    }
}

/// One anonymous ballot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CastVoteRecord {
    pub ballot_id: String,
    pub precinct: String,
    pub ballot_style: String,
    pub vote_method: VoteMethod,
    pub marks: BTreeMap<String, Mark>,
}

/// The three quasi-identifiers shared by ballots and voter files.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuasiIds {
    pub precinct: String,
    pub ballot_style: String,
    pub vote_method: VoteMethod,
}

#[derive(Clone, Debug)]
pub(crate) struct Interner<T: Clone + Eq + std::hash::Hash> {
    values: Vec<T>,
    index: HashMap<T, u32>,
}

impl<T: Clone + Eq + std::hash::Hash> Default for Interner<T> {
    fn default() -> Self {
        Interner {
            values: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Clone + Eq + std::hash::Hash> Interner<T> {
    pub(crate) fn intern(&mut self, value: T) -> u32 {
        if let Some(&code) = self.index.get(&value) {
            return code;
        }
        let code = self.values.len() as u32;
        self.index.insert(value.clone(), code);
        self.values.push(value);
        code
    }


    pub(crate) fn value(&self, code: u32) -> &T {
        &self.values[code as usize]
    }

    pub(crate) fn len(&self) -> usize {
        self.values.len()
    }
}

/// Immutable, validated table of ballots for one election.
#[derive(Clone, Debug)]
pub struct Election {
    contests: Vec<ContestSpec>,
    contest_index: HashMap<String, usize>,
    ballot_ids: Vec<String>,
    precincts: Interner<String>,
    styles: Interner<String>,
    methods: Interner<VoteMethod>,
    precinct: Vec<u32>,
    style: Vec<u32>,
    method: Vec<u32>,
    marks: Vec<MarkCode>,
    split_pages: bool,
}

impl Election {
    pub fn builder(contests: Vec<ContestSpec>) -> Result<ElectionBuilder> {
        ElectionBuilder::new(contests)
    }

    /// Build from per-ballot records, validating every invariant.
    pub fn from_records(
        contests: Vec<ContestSpec>,
        records: impl IntoIterator<Item = CastVoteRecord>,
    ) -> Result<Election> {
        let mut builder = ElectionBuilder::new(contests)?;
        for record in records {
            builder.push_record(&record)?;
        }
        Ok(builder.finish())
    }

    pub fn contests(&self) -> &[ContestSpec] {
        &self.contests
    }

    pub fn contest(&self, idx: usize) -> &ContestSpec {
        &self.contests[idx]
    }

    pub fn contest_index(&self, id: &str) -> Option<usize> {
        self.contest_index.get(&normalize_code(id)).copied()
    }

    pub fn n_contests(&self) -> usize {
        self.contests.len()
    }

    pub fn n_ballots(&self) -> usize {
        self.ballot_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ballot_ids.is_empty()
    }

    /// Pages were ingested as separate ballots because page linkage was absent.
    pub fn split_pages(&self) -> bool {
        self.split_pages
    }

    pub fn ballot_id(&self, ballot: usize) -> &str {
        &self.ballot_ids[ballot]
    }

    pub fn mark(&self, ballot: usize, contest: usize) -> MarkCode {
        self.marks[ballot * self.contests.len() + contest]
    }

    pub fn marks_row(&self, ballot: usize) -> &[MarkCode] {
        let width = self.contests.len();
        &self.marks[ballot * width..(ballot + 1) * width]
    }

    pub fn precinct(&self, ballot: usize) -> &str {
        self.precincts.value(self.precinct[ballot])
    }

    pub fn ballot_style(&self, ballot: usize) -> &str {
        self.styles.value(self.style[ballot])
    }

    pub fn vote_method(&self, ballot: usize) -> &VoteMethod {
        self.methods.value(self.method[ballot])
    }

    pub(crate) fn precinct_code(&self, ballot: usize) -> u32 {
        self.precinct[ballot]
    }

    pub(crate) fn style_code(&self, ballot: usize) -> u32 {
        self.style[ballot]
    }

    pub(crate) fn method_code(&self, ballot: usize) -> u32 {
        self.method[ballot]
    }





    pub fn distinct_precincts(&self) -> usize {
        self.precincts.len()
    }

    pub fn distinct_styles(&self) -> usize {
        self.styles.len()
    }

    pub fn distinct_methods(&self) -> usize {
        self.methods.len()
    }

    pub fn quasi_ids(&self, ballot: usize) -> QuasiIds {
        QuasiIds {
            precinct: self.precinct(ballot).to_string(),
            ballot_style: self.ballot_style(ballot).to_string(),
            vote_method: self.vote_method(ballot).clone(),
        }
    }

    pub fn decode_mark(&self, contest: usize, code: MarkCode) -> Option<Mark> {
        match code {
            MarkCode::ABSENT => None,
            MarkCode::UNDERVOTE => Some(Mark::Undervote),
            MarkCode::OVERVOTE => Some(Mark::Overvote),
            MarkCode::WRITEIN => Some(Mark::Writein),
            c => {
                let idx = c.candidate_index()?;
                Some(Mark::Candidate(self.contests[contest].choices[idx].clone()))
            }
        }
    }

    pub fn encode_mark(&self, contest: usize, mark: &Mark) -> Result<MarkCode> {
        encode_mark(&self.contests[contest], mark)
    }

    /// Per-ballot view of ballot `ballot`.
    pub fn record(&self, ballot: usize) -> CastVoteRecord {
        let marks = self
            .marks_row(ballot)
            .iter()
            .enumerate()
            .filter_map(|(c, &code)| {
                self.decode_mark(c, code)
                    .map(|m| (self.contests[c].id.clone(), m))
            })
            .collect();
        CastVoteRecord {
            ballot_id: self.ballot_ids[ballot].clone(),
            precinct: self.precinct(ballot).to_string(),
            ballot_style: self.ballot_style(ballot).to_string(),
            vote_method: self.vote_method(ballot).clone(),
            marks,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = CastVoteRecord> + '_ {
        (0..self.n_ballots()).map(|b| self.record(b))
    }

    /// Rebuild the election with every ballot's quasi-identifiers rewritten.
    /// Marks and ballot order are untouched.
    pub fn with_quasi_ids(
        &self,
        mut rewrite: impl FnMut(usize, QuasiIds) -> Result<QuasiIds>,
    ) -> Result<Election> {
        let mut builder = ElectionBuilder::new(self.contests.clone())?;
        builder.split_pages = self.split_pages;
        for b in 0..self.n_ballots() {
            let qi = rewrite(b, self.quasi_ids(b))?;
            builder.push_coded(&self.ballot_ids[b], &qi, self.marks_row(b))?;
        }
        Ok(builder.finish())
    }
}

pub(crate) fn encode_mark(contest: &ContestSpec, mark: &Mark) -> Result<MarkCode> {
    Ok(match mark {
        Mark::Undervote => MarkCode::UNDERVOTE,
        Mark::Overvote => MarkCode::OVERVOTE,
        Mark::Writein => MarkCode::WRITEIN,
        Mark::Candidate(choice) => {
            let idx = contest.choice_index(&normalize_code(choice)).ok_or_else(|| {
                Error::InvalidRecord(format!(
                    "choice `{choice}` is not listed in contest `{}`",
                    contest.id
                ))
            })?;
            MarkCode::candidate(idx)
        }
    })
}

/// Incremental constructor for an [`Election`].
#[derive(Debug)]
pub struct ElectionBuilder {
    contests: Vec<ContestSpec>,
    contest_index: HashMap<String, usize>,
    seen: HashSet<String>,
    ballot_ids: Vec<String>,
    precincts: Interner<String>,
    styles: Interner<String>,
    methods: Interner<VoteMethod>,
    precinct: Vec<u32>,
    style: Vec<u32>,
    method: Vec<u32>,
    marks: Vec<MarkCode>,
    pub(crate) split_pages: bool,
}

impl ElectionBuilder {
    pub fn new(contests: Vec<ContestSpec>) -> Result<ElectionBuilder> {
        let mut contest_index = HashMap::new();
        for (i, c) in contests.iter().enumerate() {
            if c.id.is_empty() {
                return Err(Error::InvalidRecord("empty contest id".into()));
            }
            if contest_index.insert(c.id.clone(), i).is_some() {
                return Err(Error::InvalidRecord(format!("duplicate contest `{}`", c.id)));
            }
            let distinct: HashSet<_> = c.choices.iter().collect();
            if distinct.len() != c.choices.len() {
                return Err(Error::InvalidRecord(format!(
                    "contest `{}` lists a choice twice",
                    c.id
                )));
            }
            if MarkCode::code_space(c.choices.len()) > u16::MAX as usize {
                return Err(Error::InvalidRecord(format!("contest `{}` has too many choices", c.id)));
            }
        }
        Ok(ElectionBuilder {
            contests,
            contest_index,
            seen: HashSet::new(),
            ballot_ids: Vec::new(),
            precincts: Interner::default(),
            styles: Interner::default(),
            methods: Interner::default(),
            precinct: Vec::new(),
            style: Vec::new(),
            method: Vec::new(),
            marks: Vec::new(),
            split_pages: false,
        })
    }

    pub fn contests(&self) -> &[ContestSpec] {
        &self.contests
    }

    pub fn contest_index(&self, id: &str) -> Option<usize> {
        self.contest_index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.ballot_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ballot_ids.is_empty()
    }

    pub fn push_record(&mut self, record: &CastVoteRecord) -> Result<()> {
        let mut row = vec![MarkCode::ABSENT; self.contests.len()];
        for (contest_id, mark) in &record.marks {
            let c = self
                .contest_index
                .get(&normalize_code(contest_id))
                .copied()
                .ok_or_else(|| Error::UnknownContest(contest_id.clone()))?;
            row[c] = encode_mark(&self.contests[c], mark)?;
        }
        let qi = QuasiIds {
            precinct: record.precinct.clone(),
            ballot_style: record.ballot_style.clone(),
            vote_method: record.vote_method.clone(),
        };
        self.push_coded(&record.ballot_id, &qi, &row)
    }

    /// Append a ballot whose marks are already encoded against this builder's contests.
    pub fn push_coded(&mut self, ballot_id: &str, qi: &QuasiIds, row: &[MarkCode]) -> Result<()> {
        let ballot_id = ballot_id.trim();
        if ballot_id.is_empty() {
            return Err(Error::InvalidRecord("empty ballot id".into()));
        }
        let precinct = normalize_code(&qi.precinct);
        let style = normalize_code(&qi.ballot_style);
        if precinct.is_empty() || style.is_empty() || qi.vote_method.label().is_empty() {
            return Err(Error::InvalidRecord(format!(
                "ballot `{ballot_id}` has an empty quasi-identifier"
            )));
        }
        if row.len() != self.contests.len() {
            return Err(Error::InvalidRecord(format!(
                "ballot `{ballot_id}` has {} mark slots, expected {}",
                row.len(),
                self.contests.len()
            )));
        }
        for (c, code) in row.iter().enumerate() {
            if let Some(idx) = code.candidate_index() {
                if idx >= self.contests[c].choices.len() {
                    return Err(Error::InvalidRecord(format!(
                        "ballot `{ballot_id}` marks an unlisted choice in `{}`",
                        self.contests[c].id
                    )));
                }
            }
        }
        if !self.seen.insert(ballot_id.to_string()) {
            return Err(Error::DuplicateBallot(ballot_id.to_string()));
        }
        self.ballot_ids.push(ballot_id.to_string());
        self.precinct.push(self.precincts.intern(precinct));
        self.style.push(self.styles.intern(style));
        let method = match &qi.vote_method {
            VoteMethod::Other(label) => VoteMethod::Other(normalize_code(label)),
            m => m.clone(),
        };
        self.method.push(self.methods.intern(method));
        self.marks.extend_from_slice(row);
        Ok(())
    }

    pub fn finish(self) -> Election {
        Election {
            contests: self.contests,
            contest_index: self.contest_index,
            ballot_ids: self.ballot_ids,
            precincts: self.precincts,
            styles: self.styles,
            methods: self.methods,
            precinct: self.precinct,
            style: self.style,
            method: self.method,
            marks: self.marks,
            split_pages: self.split_pages,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, method: VoteMethod, marks: &[(&str, Mark)]) -> CastVoteRecord {
        CastVoteRecord {
            ballot_id: id.into(),
            precinct: " A ".into(),
            ballot_style: "x".into(),
            vote_method: method,
            marks: marks.iter().map(|(c, m)| (c.to_string(), m.clone())).collect(),
        }
    }

    #[test]
    fn contested_requires_two_listed_choices() {
        assert!(ContestSpec::new("pres", &["a", "b"]).contested());
        assert!(!ContestSpec::new("sheriff", &["a"]).contested());
    }

    #[test]
    fn codes_are_normalized_and_records_round_trip() {
        let contests = vec![ContestSpec::new("Pres", &["Trump", "Biden"])];
        let r = record("b1", VoteMethod::Mail, &[("pres", Mark::Candidate("TRUMP ".into()))]);
        let e = Election::from_records(contests, vec![r]).unwrap();
        assert_eq!(e.precinct(0), "a");
        let back = e.record(0);
        assert_eq!(back.marks["pres"], Mark::Candidate("trump".into()));
        assert_eq!(e.mark(0, 0), MarkCode::candidate(0));
    }

    #[test]
    fn duplicate_ballot_is_rejected() {
        let contests = vec![ContestSpec::new("pres", &["a", "b"])];
        let r = record("b1", VoteMethod::Mail, &[]);
        let err = Election::from_records(contests, vec![r.clone(), r]).unwrap_err();
        assert!(matches!(err, Error::DuplicateBallot(_)));
    }

    #[test]
    fn unlisted_choice_and_unknown_contest_rejected() {
        let contests = vec![ContestSpec::new("pres", &["a", "b"])];
        let bad_choice = record("b1", VoteMethod::Mail, &[("pres", Mark::Candidate("z".into()))]);
        assert!(Election::from_records(contests.clone(), vec![bad_choice]).is_err());
        let bad_contest = record("b1", VoteMethod::Mail, &[("gov", Mark::Undervote)]);
        assert!(matches!(
            Election::from_records(contests, vec![bad_contest]),
            Err(Error::UnknownContest(_))
        ));
    }

    #[test]
    fn empty_quasi_identifier_rejected() {
        let contests = vec![ContestSpec::new("pres", &["a", "b"])];
        let mut r = record("b1", VoteMethod::Mail, &[]);
        r.ballot_style = "  ".into();
        assert!(Election::from_records(contests, vec![r]).is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!(VoteMethod::parse("In-Person"), VoteMethod::InPerson);
        assert_eq!(VoteMethod::parse(" PROVISIONAL"), VoteMethod::Provisional);
        assert_eq!(VoteMethod::parse("Early"), VoteMethod::Other("early".into()));
    }
}
