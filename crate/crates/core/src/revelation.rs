//! Public, local and probabilistic vote revelation.
//!
//! Everything is decided per (reporting unit, contest) from the unit's mark
//! tally, i.e. from exactly what an aggregate release by that unit would
//! publish. Per-ballot findings are the tally verdicts attached to the ballots
//! carrying the revealed mark.
//!
//! Conventions:
//! - `N_c` counts the unit's ballots on which the contest appears, residual
//!   votes included.
//! - By default only candidate marks can be revealed; with
//!   `count_all_abstain` undervotes, overvotes and write-ins can be too.
//! - Local findings exclude public ones (`d >= 1`), so they read as
//!   increments over public revelation.
//! - Probabilistic findings attach to the ballots carrying the mark whose
//!   share reaches the threshold; a unanimous unit qualifies at every
//!   threshold.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::ballot::{ContestSpec, Election, Mark, MarkCode, VoteMethod};
use crate::error::{Error, Result};
use crate::units::{Granularity, ReportingUnitKey, Units};

/// A probability threshold with a total order, usable as a map key.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Share(pub f64);

impl PartialEq for Share {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for Share {}
impl PartialOrd for Share {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Share {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl Hash for Share {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RevelationKind {
    Public,
    Local { alpha: u32 },
    Probabilistic { threshold: Share },
}

impl fmt::Display for RevelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RevelationKind::Public => f.write_str("public"),
            RevelationKind::Local { alpha } => write!(f, "local:{alpha}"),
            RevelationKind::Probabilistic { threshold } => write!(f, "probabilistic:{}", threshold.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RevelationOptions {
    /// Only contests with two or more listed choices and a single winner.
    pub contested_only: bool,
    /// Treat unanimous residual votes (and write-ins) as revealing.
    pub count_all_abstain: bool,
    pub excluded_contests: BTreeSet<String>,
}

impl Default for RevelationOptions {
    fn default() -> Self {
        RevelationOptions {
            contested_only: true,
            count_all_abstain: false,
            excluded_contests: BTreeSet::new(),
        }
    }
}

impl RevelationOptions {
    pub fn contest_eligible(&self, spec: &ContestSpec) -> bool {
        if self.excluded_contests.contains(&spec.id) {
            return false;
        }
        !self.contested_only || (spec.contested() && spec.single_winner())
    }

    pub fn mark_eligible(&self, code: MarkCode) -> bool {
        code.is_candidate() || (self.count_all_abstain && code.is_present())
    }
}

/// One revealed (ballot, contest) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RevelationFinding {
    pub ballot: u32,
    pub contest: u16,
    pub kind: RevelationKind,
    pub revealed: MarkCode,
    pub unit: u32,
    pub unit_size: u32,
}

/// A finding with every index resolved to its code, for export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ResolvedFinding {
    pub ballot_id: String,
    pub contest_id: String,
    pub kind: String,
    pub revealed_choice: String,
    pub unit_key: String,
    pub unit_size: u32,
}

impl RevelationFinding {
    pub fn resolve(&self, election: &Election, units: &Units) -> ResolvedFinding {
        ResolvedFinding {
            ballot_id: election.ballot_id(self.ballot as usize).to_string(),
            contest_id: election.contest(self.contest as usize).id.clone(),
            kind: self.kind.to_string(),
            revealed_choice: election
                .decode_mark(self.contest as usize, self.revealed)
                .map(|m| m.to_string())
                .unwrap_or_default(),
            unit_key: units.key(self.unit as usize).to_string(),
            unit_size: self.unit_size,
        }
    }

    pub fn revealed_mark(&self, election: &Election) -> Option<Mark> {
        election.decode_mark(self.contest as usize, self.revealed)
    }
}

/// The revealed voters of one (unit, contest, kind, mark).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitFinding {
    pub unit: u32,
    pub contest: u16,
    pub kind: RevelationKind,
    pub revealed: MarkCode,
    pub count: u32,
}

#[derive(Clone, Copy, Debug)]
struct TallyEntry {
    unit: u32,
    contest: u16,
    start: u32,
    len: u16,
    present: u32,
}

/// Mark counts per (unit, contest): the content of an aggregate release.
#[derive(Clone, Debug)]
pub struct UnitTallies {
    granularity: Granularity,
    keys: Vec<ReportingUnitKey>,
    sizes: Vec<u32>,
    contests: Vec<ContestSpec>,
    entries: Vec<TallyEntry>,
    counts: Vec<(MarkCode, u32)>,
}

impl UnitTallies {
    pub fn build(election: &Election, units: &Units) -> UnitTallies {
        let n_contests = election.n_contests();
        let spans: Vec<usize> = election
            .contests()
            .iter()
            .map(|c| MarkCode::code_space(c.choices.len()))
            .collect();
        let mut base = Vec::with_capacity(n_contests + 1);
        base.push(0usize);
        for s in &spans {
            base.push(base.last().unwrap() + s);
        }
        let mut scratch = vec![0u32; *base.last().unwrap()];
        let mut present = vec![0u32; n_contests];

        let mut entries = Vec::new();
        let mut counts = Vec::new();
        let mut sizes = Vec::with_capacity(units.len());
        for u in 0..units.len() {
            let members = units.members(u);
            sizes.push(members.len() as u32);
            for &b in members {
                for (c, code) in election.marks_row(b as usize).iter().enumerate() {
                    if code.is_present() {
                        scratch[base[c] + code.0 as usize] += 1;
                        present[c] += 1;
                    }
                }
            }
            for c in 0..n_contests {
                if present[c] == 0 {
                    continue;
                }
                let start = counts.len();
                for (code, slot) in scratch[base[c]..base[c + 1]].iter_mut().enumerate() {
                    if *slot > 0 {
                        counts.push((MarkCode(code as u16), *slot));
                        *slot = 0;
                    }
                }
                entries.push(TallyEntry {
                    unit: u as u32,
                    contest: c as u16,
                    start: start as u32,
                    len: (counts.len() - start) as u16,
                    present: present[c],
                });
                present[c] = 0;
            }
        }
        UnitTallies {
            granularity: units.granularity().clone(),
            keys: (0..units.len()).map(|u| units.key(u).clone()).collect(),
            sizes,
            contests: election.contests().to_vec(),
            entries,
            counts,
        }
    }

    pub fn granularity(&self) -> &Granularity {
        &self.granularity
    }

    pub fn n_units(&self) -> usize {
        self.keys.len()
    }

    pub fn key(&self, unit: usize) -> &ReportingUnitKey {
        &self.keys[unit]
    }

    pub fn unit_size(&self, unit: usize) -> u32 {
        self.sizes[unit]
    }

    pub fn contests(&self) -> &[ContestSpec] {
        &self.contests
    }

    /// Iterate (unit, contest, N_c, counts) over unit-contests with at least one ballot.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u32, &[(MarkCode, u32)])> + '_ {
        self.entries.iter().map(|e| {
            let start = e.start as usize;
            (
                e.unit as usize,
                e.contest as usize,
                e.present,
                &self.counts[start..start + e.len as usize],
            )
        })
    }

    /// Counts of one (unit, contest), empty when the contest is not on the unit's ballots.
    pub fn counts(&self, unit: usize, contest: usize) -> &[(MarkCode, u32)] {
        let lo = self
            .entries
            .partition_point(|e| (e.unit as usize, e.contest as usize) < (unit, contest));
        match self.entries.get(lo) {
            Some(e) if e.unit as usize == unit && e.contest as usize == contest => {
                let start = e.start as usize;
                &self.counts[start..start + e.len as usize]
            }
            _ => &[],
        }
    }
}

/// Verdicts of one unit-contest tally for `kind`.
fn tally_verdicts(
    kind: RevelationKind,
    present: u32,
    counts: &[(MarkCode, u32)],
    opts: &RevelationOptions,
    out: &mut Vec<(MarkCode, u32)>,
) {
    match kind {
        RevelationKind::Public => {
            if let [(code, c)] = counts {
                if opts.mark_eligible(*code) {
                    out.push((*code, *c));
                }
            }
        }
        RevelationKind::Local { alpha } => {
            for &(code, c) in counts {
                let d = present - c;
                if d >= 1 && d <= alpha && opts.mark_eligible(code) {
                    out.push((code, c));
                }
            }
        }
        RevelationKind::Probabilistic { threshold } => {
            for &(code, c) in counts {
                if c as f64 / present as f64 >= threshold.0 && opts.mark_eligible(code) {
                    out.push((code, c));
                }
            }
        }
    }
}

/// Revelation verdicts computed from an aggregate release alone.
pub fn unit_findings_from_tallies(
    tallies: &UnitTallies,
    kind: RevelationKind,
    opts: &RevelationOptions,
) -> Vec<UnitFinding> {
    let mut out = Vec::new();
    let mut verdicts = Vec::new();
    for (unit, contest, present, counts) in tallies.iter() {
        if !opts.contest_eligible(&tallies.contests[contest]) {
            continue;
        }
        verdicts.clear();
        tally_verdicts(kind, present, counts, opts, &mut verdicts);
        for &(code, count) in &verdicts {
            out.push(UnitFinding {
                unit: unit as u32,
                contest: contest as u16,
                kind,
                revealed: code,
                count,
            });
        }
    }
    out.sort();
    out
}

/// Collapse per-ballot findings to per-unit verdicts.
pub fn group_findings(findings: &[RevelationFinding]) -> Vec<UnitFinding> {
    let mut groups: BTreeMap<(u32, u16, RevelationKind, MarkCode), u32> = BTreeMap::new();
    for f in findings {
        *groups.entry((f.unit, f.contest, f.kind, f.revealed)).or_default() += 1;
    }
    groups
        .into_iter()
        .map(|((unit, contest, kind, revealed), count)| UnitFinding {
            unit,
            contest,
            kind,
            revealed,
            count,
        })
        .collect()
}

/// Delimited export of unit-level verdicts, keyed by codes only.
pub fn write_unit_findings<W: std::io::Write>(
    tallies: &UnitTallies,
    findings: &[UnitFinding],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit_key", "contest_id", "kind", "revealed_choice", "revealed_voters"])?;
    for f in findings {
        let spec = &tallies.contests[f.contest as usize];
        let choice = match f.revealed.candidate_index() {
            Some(i) => spec.choices[i].clone(),
            None => format!("[{}]", residual_label(f.revealed)),
        };
        w.write_record([
            tallies.key(f.unit as usize).to_string(),
            spec.id.clone(),
            f.kind.to_string(),
            choice,
            f.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<findings output>", e))?;
    Ok(())
}

fn residual_label(code: MarkCode) -> &'static str {
    match code {
        MarkCode::UNDERVOTE => "undervote",
        MarkCode::OVERVOTE => "overvote",
        MarkCode::WRITEIN => "writein",
        _ => "absent",
    }
}

/// Computes findings for one election at one granularity.
pub struct RevelationEngine<'a> {
    election: &'a Election,
    units: &'a Units,
    tallies: UnitTallies,
    opts: RevelationOptions,
}

impl<'a> RevelationEngine<'a> {
    pub fn new(election: &'a Election, units: &'a Units, opts: RevelationOptions) -> Self {
        RevelationEngine {
            election,
            units,
            tallies: UnitTallies::build(election, units),
            opts,
        }
    }

    pub fn tallies(&self) -> &UnitTallies {
        &self.tallies
    }

    pub fn units(&self) -> &Units {
        self.units
    }

    pub fn election(&self) -> &Election {
        self.election
    }

    pub fn options(&self) -> &RevelationOptions {
        &self.opts
    }

    pub fn unit_findings(&self, kind: RevelationKind) -> Vec<UnitFinding> {
        unit_findings_from_tallies(&self.tallies, kind, &self.opts)
    }

    /// Attach unit verdicts to the ballots carrying the revealed mark.
    pub fn findings(&self, kind: RevelationKind) -> Vec<RevelationFinding> {
        let mut out = Vec::new();
        for uf in self.unit_findings(kind) {
            let unit = uf.unit as usize;
            let size = self.units.size(unit) as u32;
            for &b in self.units.members(unit) {
                if self.election.mark(b as usize, uf.contest as usize) == uf.revealed {
                    out.push(RevelationFinding {
                        ballot: b,
                        contest: uf.contest,
                        kind,
                        revealed: uf.revealed,
                        unit: uf.unit,
                        unit_size: size,
                    });
                }
            }
        }
        out.sort();
        out
    }

    pub fn public(&self) -> Vec<RevelationFinding> {
        self.findings(RevelationKind::Public)
    }

    /// Local findings for coalition size `alpha`; empty for `alpha == 0`.
    pub fn local(&self, alpha: u32) -> Vec<RevelationFinding> {
        if alpha == 0 {
            return Vec::new();
        }
        self.findings(RevelationKind::Local { alpha })
    }

    pub fn probabilistic(&self, threshold: f64) -> Result<Vec<RevelationFinding>> {
        check_threshold(threshold)?;
        Ok(self.findings(RevelationKind::Probabilistic {
            threshold: Share(threshold),
        }))
    }

    /// Every ballot in a unit-contest where some eligible mark reaches the
    /// threshold, whatever that ballot's own mark.
    pub fn probabilistic_exposed(&self, threshold: f64) -> Result<Vec<u32>> {
        check_threshold(threshold)?;
        let kind = RevelationKind::Probabilistic {
            threshold: Share(threshold),
        };
        let mut ballots = BTreeSet::new();
        for uf in self.unit_findings(kind) {
            for &b in self.units.members(uf.unit as usize) {
                if self.election.mark(b as usize, uf.contest as usize).is_present() {
                    ballots.insert(b);
                }
            }
        }
        Ok(ballots.into_iter().collect())
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("threshold {threshold} outside (0, 1]")));
    }
    Ok(())
}

pub fn public_revelations(
    election: &Election,
    units: &Units,
    opts: &RevelationOptions,
) -> Vec<RevelationFinding> {
    RevelationEngine::new(election, units, opts.clone()).public()
}

pub fn local_revelations(
    election: &Election,
    units: &Units,
    alpha: u32,
    opts: &RevelationOptions,
) -> Vec<RevelationFinding> {
    RevelationEngine::new(election, units, opts.clone()).local(alpha)
}

pub fn probabilistic_revelations(
    election: &Election,
    units: &Units,
    threshold: f64,
    opts: &RevelationOptions,
) -> Result<Vec<RevelationFinding>> {
    RevelationEngine::new(election, units, opts.clone()).probabilistic(threshold)
}

/// Per-ballot evaluation straight from the definitions: for every ballot,
/// count the other ballots of its unit that differ from it in the contest.
/// Quadratic in unit size; used to cross-check the tally path.
pub mod reference {
    use super::*;

    pub fn pairwise_findings(
        election: &Election,
        units: &Units,
        kind: RevelationKind,
        opts: &RevelationOptions,
    ) -> Vec<RevelationFinding> {
        let mut out = Vec::new();
        for u in 0..units.len() {
            let members = units.members(u);
            for (c, spec) in election.contests().iter().enumerate() {
                if !opts.contest_eligible(spec) {
                    continue;
                }
                for &b in members {
                    let mine = election.mark(b as usize, c);
                    if !mine.is_present() || !opts.mark_eligible(mine) {
                        continue;
                    }
                    let mut on_ballot = 0u32;
                    let mut differ = 0u32;
                    for &other in members {
                        let theirs = election.mark(other as usize, c);
                        if theirs.is_present() {
                            on_ballot += 1;
                            if theirs != mine {
                                differ += 1;
                            }
                        }
                    }
                    let same = on_ballot - differ;
                    let revealed = match kind {
                        RevelationKind::Public => differ == 0,
                        RevelationKind::Local { alpha } => differ >= 1 && differ <= alpha,
                        RevelationKind::Probabilistic { threshold } => {
                            same as f64 / on_ballot as f64 >= threshold.0
                        }
                    };
                    if revealed {
                        out.push(RevelationFinding {
                            ballot: b,
                            contest: c as u16,
                            kind,
                            revealed: mine,
                            unit: u as u32,
                            unit_size: members.len() as u32,
                        });
                    }
                }
            }
        }
        out.sort();
        out
    }
}

/// Distinct ballots among `findings`.
pub fn revealed_ballots(findings: &[RevelationFinding]) -> BTreeSet<u32> {
    findings.iter().map(|f| f.ballot).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub kind: String,
    /// Voters with at least one finding of this kind (local rows: public or local).
    pub voters: usize,
    /// Local rows only: voters added on top of public revelation.
    pub increment_over_public: Option<usize>,
    pub total_voters: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RevelationSummary {
    pub granularity: Granularity,
    pub total_voters: usize,
    pub rows: Vec<SummaryRow>,
}

impl RevelationSummary {
    pub fn row(&self, kind: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn public(&self) -> usize {
        self.row("public").map(|r| r.voters).unwrap_or(0)
    }
}

/// Voters with at least one revealed vote, per kind of revelation.
pub fn any_contest_summary(
    granularity: &Granularity,
    findings: &[RevelationFinding],
    total_voters: usize,
) -> Result<RevelationSummary> {
    let mut by_kind: BTreeMap<RevelationKind, HashSet<u32>> = BTreeMap::new();
    by_kind.entry(RevelationKind::Public).or_default();
    for f in findings {
        by_kind.entry(f.kind).or_default().insert(f.ballot);
    }
    let distinct: HashSet<u32> = findings.iter().map(|f| f.ballot).collect();
    if distinct.len() > total_voters {
        return Err(Error::TotalTooSmall {
            total: total_voters,
            distinct: distinct.len(),
        });
    }
    let public = by_kind[&RevelationKind::Public].clone();
    let pct = |n: usize| {
        if total_voters == 0 {
            0.0
        } else {
            100.0 * n as f64 / total_voters as f64
        }
    };
    let rows = by_kind
        .iter()
        .map(|(kind, ballots)| match kind {
            RevelationKind::Local { .. } => {
                let cumulative = public.union(ballots).count();
                SummaryRow {
                    kind: kind.to_string(),
                    voters: cumulative,
                    increment_over_public: Some(cumulative - public.len()),
                    total_voters,
                    percent: pct(cumulative),
                }
            }
            _ => SummaryRow {
                kind: kind.to_string(),
                voters: ballots.len(),
                increment_over_public: None,
                total_voters,
                percent: pct(ballots.len()),
            },
        })
        .collect();
    Ok(RevelationSummary {
        granularity: granularity.clone(),
        total_voters,
        rows,
    })
}

/// Tags ballot styles as full or federal-only.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleClassifier {
    pub federal_only: BTreeSet<String>,
}

impl StyleClassifier {
    /// Styles whose ballots carry only federal contests, in an election that
    /// also has non-federal contests.
    pub fn infer(election: &Election) -> StyleClassifier {
        let federal: Vec<bool> = election.contests().iter().map(|c| c.federal).collect();
        if federal.iter().all(|&f| f) {
            return StyleClassifier::default();
        }
        let mut has_state: BTreeMap<String, bool> = BTreeMap::new();
        for b in 0..election.n_ballots() {
            let state = election
                .marks_row(b)
                .iter()
                .zip(&federal)
                .any(|(m, &fed)| m.is_present() && !fed);
            *has_state.entry(election.ballot_style(b).to_string()).or_default() |= state;
        }
        StyleClassifier {
            federal_only: has_state
                .into_iter()
                .filter(|(_, state)| !state)
                .map(|(s, _)| s)
                .collect(),
        }
    }

    pub fn is_federal_only(&self, style: &str) -> bool {
        self.federal_only.contains(style)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decomposition {
    VoteMethod,
    BallotStyleType,
    /// Provisional method or federal-only style versus everything else.
    ProvisionalOrFederalOnly,
    /// Mean of per-ballot revelation within each contest.
    Contest,
    /// Voters grouped by their mark in the named contest.
    ChoiceIn(String),
}

/// Exclusions for the per-contest decomposition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContestExclusions {
    pub federal_only_ballots: bool,
    pub contests: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupRow {
    pub group: String,
    pub voters: usize,
    pub revealed: usize,
    pub rate: f64,
}

fn rate(revealed: usize, voters: usize) -> f64 {
    if voters == 0 {
        0.0
    } else {
        revealed as f64 / voters as f64
    }
}

/// Break revealed voters down by a ballot attribute.
pub fn decompose_by(
    findings: &[RevelationFinding],
    election: &Election,
    dimension: &Decomposition,
    classifier: Option<&StyleClassifier>,
    exclusions: &ContestExclusions,
) -> Result<Vec<GroupRow>> {
    let needs_classifier = matches!(
        dimension,
        Decomposition::BallotStyleType | Decomposition::ProvisionalOrFederalOnly
    ) || (matches!(dimension, Decomposition::Contest) && exclusions.federal_only_ballots);
    let classifier = match (needs_classifier, classifier) {
        (true, None) => return Err(Error::MissingClassifier(format!("{dimension:?}"))),
        (_, c) => c,
    };
    let revealed = revealed_ballots(findings);
    let federal_only =
        |b: usize| classifier.is_some_and(|c| c.is_federal_only(election.ballot_style(b)));

    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut add = |group: String, hit: bool| {
        let e = groups.entry(group).or_default();
        e.0 += 1;
        if hit {
            e.1 += 1;
        }
    };

    match dimension {
        Decomposition::VoteMethod => {
            for b in 0..election.n_ballots() {
                add(
                    election.vote_method(b).label().to_string(),
                    revealed.contains(&(b as u32)),
                );
            }
        }
        Decomposition::BallotStyleType => {
            for b in 0..election.n_ballots() {
                let g = if federal_only(b) { "federal_only" } else { "full" };
                add(g.to_string(), revealed.contains(&(b as u32)));
            }
        }
        Decomposition::ProvisionalOrFederalOnly => {
            for b in 0..election.n_ballots() {
                let special =
                    *election.vote_method(b) == VoteMethod::Provisional || federal_only(b);
                let g = if special { "provisional_or_federal_only" } else { "other" };
                add(g.to_string(), revealed.contains(&(b as u32)));
            }
        }
        Decomposition::Contest => {
            let pairs: HashSet<(u32, u16)> = findings.iter().map(|f| (f.ballot, f.contest)).collect();
            for (c, spec) in election.contests().iter().enumerate() {
                if exclusions.contests.contains(&spec.id) {
                    continue;
                }
                for b in 0..election.n_ballots() {
                    if !election.mark(b, c).is_present()
                        || (exclusions.federal_only_ballots && federal_only(b))
                    {
                        continue;
                    }
                    add(spec.id.clone(), pairs.contains(&(b as u32, c as u16)));
                }
            }
            // keep contests with no ballots out of the table
        }
        Decomposition::ChoiceIn(contest) => {
            let c = election
                .contest_index(contest)
                .ok_or_else(|| Error::UnknownContest(contest.clone()))?;
            for b in 0..election.n_ballots() {
                let g = election
                    .decode_mark(c, election.mark(b, c))
                    .map(|m| m.to_string())
                    .unwrap_or_else(|| "[absent]".into());
                add(g, revealed.contains(&(b as u32)));
            }
        }
    }

    Ok(groups
        .into_iter()
        .map(|(group, (voters, hit))| GroupRow {
            group,
            voters,
            revealed: hit,
            rate: rate(hit, voters),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContestStats {
    pub contest: String,
    pub ballots: usize,
    pub undervotes: usize,
    pub overvotes: usize,
    pub writeins: usize,
    pub candidate_votes: usize,
    pub undervote_rate: f64,
    /// Leading choice's share of candidate votes; `None` without candidate votes.
    pub lopsidedness: Option<f64>,
    pub two_choice: bool,
}

pub fn contest_stats(election: &Election) -> Vec<ContestStats> {
    let mut per_choice: Vec<Vec<usize>> = election
        .contests()
        .iter()
        .map(|c| vec![0; c.choices.len()])
        .collect();
    let mut residual = vec![[0usize; 3]; election.n_contests()];
    let mut ballots = vec![0usize; election.n_contests()];
    for b in 0..election.n_ballots() {
        for (c, &code) in election.marks_row(b).iter().enumerate() {
            match code {
                MarkCode::ABSENT => continue,
                MarkCode::UNDERVOTE => residual[c][0] += 1,
                MarkCode::OVERVOTE => residual[c][1] += 1,
                MarkCode::WRITEIN => residual[c][2] += 1,
                code => per_choice[c][code.candidate_index().unwrap()] += 1,
            }
            ballots[c] += 1;
        }
    }
    election
        .contests()
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let candidate_votes: usize = per_choice[c].iter().sum();
            let leader = per_choice[c].iter().copied().max().unwrap_or(0);
            ContestStats {
                contest: spec.id.clone(),
                ballots: ballots[c],
                undervotes: residual[c][0],
                overvotes: residual[c][1],
                writeins: residual[c][2],
                candidate_votes,
                undervote_rate: rate(residual[c][0], ballots[c]),
                lopsidedness: (candidate_votes > 0)
                    .then(|| leader as f64 / candidate_votes as f64),
                two_choice: spec.choices.len() == 2,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballot::CastVoteRecord;
    use crate::units::{build_reporting_units, Granularity};

    /// One unit, one contest with the given marks (`~u` undervote, `~w` write-in).
    fn unit(marks: &[(&str, usize)]) -> Election {
        let mut records = Vec::new();
        for (mark, n) in marks {
            for _ in 0..*n {
                let m = match *mark {
                    "~u" => Mark::Undervote,
                    "~w" => Mark::Writein,
                    c => Mark::Candidate(c.to_string()),
                };
                records.push(CastVoteRecord {
                    ballot_id: format!("b{}", records.len()),
                    precinct: "p".into(),
                    ballot_style: "s".into(),
                    vote_method: VoteMethod::Mail,
                    marks: [("c".to_string(), m)].into(),
                });
            }
        }
        Election::from_records(vec![ContestSpec::new("c", &["a", "b"])], records).unwrap()
    }

    fn engine_counts(e: &Election, kind: RevelationKind) -> usize {
        let units = build_reporting_units(e, &Granularity::Precinct);
        RevelationEngine::new(e, &units, RevelationOptions::default())
            .findings(kind)
            .len()
    }

    #[test]
    fn residual_vote_blocks_unanimity() {
        let e = unit(&[("a", 5), ("~u", 1)]);
        assert_eq!(engine_counts(&e, RevelationKind::Public), 0);
    }

    #[test]
    fn local_alpha_rule() {
        let e = unit(&[("a", 8), ("b", 2)]);
        assert_eq!(engine_counts(&e, RevelationKind::Local { alpha: 1 }), 0);
        assert_eq!(engine_counts(&e, RevelationKind::Local { alpha: 2 }), 8);
    }

    #[test]
    fn probabilistic_share() {
        let p95 = RevelationKind::Probabilistic { threshold: Share(0.95) };
        assert_eq!(engine_counts(&unit(&[("a", 19), ("b", 1)]), p95), 19);
        assert_eq!(engine_counts(&unit(&[("a", 94), ("b", 6)]), p95), 0);
    }

    #[test]
    fn all_abstain_only_counts_in_abstain_mode() {
        let e = unit(&[("~u", 3)]);
        assert_eq!(engine_counts(&e, RevelationKind::Public), 0);
        let units = build_reporting_units(&e, &Granularity::Precinct);
        let opts = RevelationOptions {
            count_all_abstain: true,
            ..Default::default()
        };
        assert_eq!(public_revelations(&e, &units, &opts).len(), 3);
    }

    #[test]
    fn writeins_break_unanimity_and_are_not_revealed() {
        assert_eq!(engine_counts(&unit(&[("a", 4), ("~w", 1)]), RevelationKind::Public), 0);
        assert_eq!(engine_counts(&unit(&[("~w", 4)]), RevelationKind::Public), 0);
    }

    #[test]
    fn alpha_zero_is_empty() {
        let e = unit(&[("a", 3), ("b", 1)]);
        let units = build_reporting_units(&e, &Granularity::Precinct);
        assert!(local_revelations(&e, &units, 0, &RevelationOptions::default()).is_empty());
    }

    #[test]
    fn uncontested_contest_skipped_by_default() {
        let records = vec![CastVoteRecord {
            ballot_id: "b".into(),
            precinct: "p".into(),
            ballot_style: "s".into(),
            vote_method: VoteMethod::Mail,
            marks: [("solo".to_string(), Mark::Candidate("x".into()))].into(),
        }];
        let e = Election::from_records(vec![ContestSpec::new("solo", &["x"])], records).unwrap();
        let units = build_reporting_units(&e, &Granularity::Precinct);
        assert!(public_revelations(&e, &units, &RevelationOptions::default()).is_empty());
        let all = RevelationOptions {
            contested_only: false,
            ..Default::default()
        };
        assert_eq!(public_revelations(&e, &units, &all).len(), 1);
    }

    #[test]
    fn summary_rejects_small_total() {
        let e = unit(&[("a", 3)]);
        let units = build_reporting_units(&e, &Granularity::Precinct);
        let f = public_revelations(&e, &units, &RevelationOptions::default());
        assert!(any_contest_summary(&Granularity::Precinct, &f, 2).is_err());
        let s = any_contest_summary(&Granularity::Precinct, &f, 3).unwrap();
        assert_eq!(s.public(), 3);
        assert_eq!(s.rows[0].percent, 100.0);
    }

    #[test]
    fn contest_stats_hand_computed() {
        let e = unit(&[("a", 60), ("b", 40), ("~u", 25)]);
        let s = &contest_stats(&e)[0];
        assert_eq!(s.undervote_rate, 0.2);
        assert_eq!(s.lopsidedness, Some(0.6));
        let all_under = unit(&[("~u", 4)]);
        let s = &contest_stats(&all_under)[0];
        assert_eq!(s.undervote_rate, 1.0);
        assert_eq!(s.lopsidedness, None);
    }

    #[test]
    fn decompose_requires_classifier() {
        let e = unit(&[("a", 2)]);
        let err = decompose_by(&[], &e, &Decomposition::BallotStyleType, None, &Default::default());
        assert!(matches!(err, Err(Error::MissingClassifier(_))));
    }

    #[test]
    fn single_group_rate_equals_overall() {
        let e = unit(&[("a", 3)]);
        let units = build_reporting_units(&e, &Granularity::Precinct);
        let f = public_revelations(&e, &units, &RevelationOptions::default());
        let rows = decompose_by(&f, &e, &Decomposition::VoteMethod, None, &Default::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].rate, 1.0);
    }

    #[test]
    fn tally_lookup() {
        let e = unit(&[("a", 2), ("~u", 1)]);
        let units = build_reporting_units(&e, &Granularity::Precinct);
        let t = UnitTallies::build(&e, &units);
        assert_eq!(
            t.counts(0, 0),
            &[(MarkCode::UNDERVOTE, 1), (MarkCode::candidate(0), 2)]
        );
        assert!(t.counts(1, 0).is_empty());
    }
}
