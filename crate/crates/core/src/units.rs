//! Reporting units: partitions of the ballots by quasi-identifier key.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ballot::Election;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Precinct,
    Style,
    Method,
}

impl Dimension {
    fn label(self) -> &'static str {
        match self {
            Dimension::Precinct => "precinct",
            Dimension::Style => "style",
            Dimension::Method => "method",
        }
    }
}

/// How finely results are reported.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Granularity {
    Precinct,
    PrecinctMethod,
    PrecinctStyle,
    /// precinct x style x method, equivalent to releasing ballots.
    BallotEquivalent,
    Style,
    Custom(Vec<Dimension>),
}

impl Granularity {
    pub fn dims(&self) -> Vec<Dimension> {
        use Dimension::*;
        match self {
            Granularity::Precinct => vec![Precinct],
            Granularity::PrecinctMethod => vec![Precinct, Method],
            Granularity::PrecinctStyle => vec![Precinct, Style],
            Granularity::BallotEquivalent => vec![Precinct, Style, Method],
            Granularity::Style => vec![Style],
            Granularity::Custom(dims) => dims.clone(),
        }
    }

    pub fn has(&self, dim: Dimension) -> bool {
        self.dims().contains(&dim)
    }

    /// Canonical granularity for a set of dimensions.
    pub fn from_dims(dims: &[Dimension]) -> Granularity {
        use Dimension::*;
        let mut sorted = dims.to_vec();
        sorted.sort();
        sorted.dedup();
        match sorted.as_slice() {
            [Precinct] => Granularity::Precinct,
            [Precinct, Method] => Granularity::PrecinctMethod,
            [Precinct, Style] => Granularity::PrecinctStyle,
            [Precinct, Style, Method] => Granularity::BallotEquivalent,
            [Style] => Granularity::Style,
            _ => Granularity::Custom(sorted),
        }
    }

    /// Next coarser granularity: method is dropped first, then style, then precinct.
    pub fn parent(&self) -> Option<Granularity> {
        let dims = self.dims();
        for drop in [Dimension::Method, Dimension::Style, Dimension::Precinct] {
            if dims.contains(&drop) {
                let rest: Vec<_> = dims.iter().copied().filter(|&d| d != drop).collect();
                if rest.is_empty() {
                    return None;
                }
                return Some(Granularity::from_dims(&rest));
            }
        }
        None
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::Precinct => f.write_str("precinct"),
            Granularity::PrecinctMethod => f.write_str("precinct_method"),
            Granularity::PrecinctStyle => f.write_str("precinct_style"),
            Granularity::BallotEquivalent => f.write_str("ballot_equivalent"),
            Granularity::Style => f.write_str("style"),
            Granularity::Custom(dims) => {
                let parts: Vec<_> = dims.iter().map(|d| d.label()).collect();
                write!(f, "custom:{}", parts.join("+"))
            }
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Granularity> {
        let s = s.trim().to_lowercase();
        Ok(match s.as_str() {
            "precinct" => Granularity::Precinct,
            "precinct_method" | "precinct-method" => Granularity::PrecinctMethod,
            "precinct_style" | "precinct-style" => Granularity::PrecinctStyle,
            "ballot_equivalent" | "ballot-equivalent" | "ballot" => Granularity::BallotEquivalent,
            "style" => Granularity::Style,
            other => {
                let Some(list) = other.strip_prefix("custom:") else {
                    return Err(Error::Config(format!("unknown granularity `{s}`")));
                };
                let mut dims = Vec::new();
                for part in list.split('+') {
                    dims.push(match part.trim() {
                        "precinct" => Dimension::Precinct,
                        "style" | "ballot_style" => Dimension::Style,
                        "method" | "vote_method" => Dimension::Method,
                        d => return Err(Error::Config(format!("unknown dimension `{d}`"))),
                    });
                }
                if dims.is_empty() {
                    return Err(Error::Config("custom granularity needs a dimension".into()));
                }
                Granularity::Custom(dims)
            }
        })
    }
}

impl Serialize for Granularity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Granularity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReportingUnitKey {
    pub granularity: Granularity,
    pub values: Vec<String>,
}

impl ReportingUnitKey {
    pub fn new(granularity: Granularity, values: Vec<String>) -> Result<ReportingUnitKey> {
        if values.len() != granularity.dims().len() {
            return Err(Error::InvalidRecord(format!(
                "key for {granularity} needs {} values, got {}",
                granularity.dims().len(),
                values.len()
            )));
        }
        Ok(ReportingUnitKey {
            granularity,
            values,
        })
    }

    pub fn value(&self, dim: Dimension) -> Option<&str> {
        let pos = self.granularity.dims().iter().position(|&d| d == dim)?;
        Some(&self.values[pos])
    }
}

impl fmt::Display for ReportingUnitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.values.join("|"))
    }
}

/// A reporting unit with its ballots (as indices into the election).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportingUnit<'a> {
    pub key: &'a ReportingUnitKey,
    pub ballots: &'a [u32],
}

impl ReportingUnit<'_> {
    pub fn size(&self) -> usize {
        self.ballots.len()
    }
}

/// A partition of an election's ballots into reporting units, stored as
/// compressed rows: unit `u` owns `members[offsets[u]..offsets[u + 1]]`.
#[derive(Clone, Debug)]
pub struct Units {
    granularity: Granularity,
    keys: Vec<ReportingUnitKey>,
    offsets: Vec<usize>,
    members: Vec<u32>,
    unit_of: Vec<u32>,
}

impl Units {
    /// Assemble a partition from explicit groups. Groups must be non-empty,
    /// disjoint, and cover `n_ballots` ballots.
    pub fn from_groups(
        granularity: Granularity,
        n_ballots: usize,
        groups: Vec<(ReportingUnitKey, Vec<u32>)>,
    ) -> Result<Units> {
        let mut keys = Vec::with_capacity(groups.len());
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut members = Vec::with_capacity(n_ballots);
        let mut unit_of = vec![u32::MAX; n_ballots];
        offsets.push(0);
        for (u, (key, ballots)) in groups.into_iter().enumerate() {
            if ballots.is_empty() {
                return Err(Error::InvalidRecord(format!("unit {key} is empty")));
            }
            for &b in &ballots {
                let slot = unit_of
                    .get_mut(b as usize)
                    .ok_or_else(|| Error::InvalidRecord(format!("ballot index {b} out of range")))?;
                if *slot != u32::MAX {
                    return Err(Error::InvalidRecord(format!("ballot index {b} in two units")));
                }
                *slot = u as u32;
            }
            members.extend_from_slice(&ballots);
            offsets.push(members.len());
            keys.push(key);
        }
        if members.len() != n_ballots {
            return Err(Error::InvalidRecord("groups do not cover every ballot".into()));
        }
        Ok(Units {
            granularity,
            keys,
            offsets,
            members,
            unit_of,
        })
    }

    pub fn granularity(&self) -> &Granularity {
        &self.granularity
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn n_ballots(&self) -> usize {
        self.unit_of.len()
    }

    pub fn key(&self, unit: usize) -> &ReportingUnitKey {
        &self.keys[unit]
    }

    pub fn members(&self, unit: usize) -> &[u32] {
        &self.members[self.offsets[unit]..self.offsets[unit + 1]]
    }

    pub fn size(&self, unit: usize) -> usize {
        self.offsets[unit + 1] - self.offsets[unit]
    }

    pub fn unit_of(&self, ballot: usize) -> usize {
        self.unit_of[ballot] as usize
    }

    pub fn get(&self, unit: usize) -> ReportingUnit<'_> {
        ReportingUnit {
            key: &self.keys[unit],
            ballots: self.members(unit),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ReportingUnit<'_>> {
        (0..self.len()).map(|u| self.get(u))
    }

    pub fn find(&self, key: &ReportingUnitKey) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }
}

/// Key value of `ballot` along each dimension of `dims`.
pub(crate) fn key_values(election: &Election, ballot: usize, dims: &[Dimension]) -> Vec<String> {
    dims.iter()
        .map(|d| match d {
            Dimension::Precinct => election.precinct(ballot).to_string(),
            Dimension::Style => election.ballot_style(ballot).to_string(),
            Dimension::Method => election.vote_method(ballot).label().to_string(),
        })
        .collect()
}

/// Partition the ballots into reporting units at `granularity`.
/// Units are ordered by key; ballots within a unit keep election order.
pub fn build_reporting_units(election: &Election, granularity: &Granularity) -> Units {
    let dims = granularity.dims();
    let n = election.n_ballots();
    let pack = |b: usize| -> u64 {
        let mut key = 0u64;
        for d in &dims {
            let code = match d {
                Dimension::Precinct => election.precinct_code(b),
                Dimension::Style => election.style_code(b),
                Dimension::Method => election.method_code(b),
            } as u64;
            key = (key << 21) | code;
        }
        key
    };

    let mut slot: HashMap<u64, u32> = HashMap::new();
    let mut first_ballot: Vec<usize> = Vec::new();
    let mut raw_unit = Vec::with_capacity(n);
    for b in 0..n {
        let next = slot.len() as u32;
        let u = *slot.entry(pack(b)).or_insert_with(|| {
            first_ballot.push(b);
            next
        });
        raw_unit.push(u);
    }

    let raw_keys: Vec<Vec<String>> = first_ballot
        .iter()
        .map(|&b| key_values(election, b, &dims))
        .collect();
    let mut order: Vec<u32> = (0..raw_keys.len() as u32).collect();
    order.sort_by(|&a, &b| raw_keys[a as usize].cmp(&raw_keys[b as usize]));
    let mut rank = vec![0u32; order.len()];
    for (r, &u) in order.iter().enumerate() {
        rank[u as usize] = r as u32;
    }

    let mut sizes = vec![0usize; order.len()];
    let unit_of: Vec<u32> = raw_unit.iter().map(|&u| rank[u as usize]).collect();
    for &u in &unit_of {
        sizes[u as usize] += 1;
    }
    let mut offsets = Vec::with_capacity(sizes.len() + 1);
    offsets.push(0);
    for s in &sizes {
        offsets.push(offsets.last().unwrap() + s);
    }
    let mut cursor = offsets.clone();
    let mut members = vec![0u32; n];
    for (b, &u) in unit_of.iter().enumerate() {
        members[cursor[u as usize]] = b as u32;
        cursor[u as usize] += 1;
    }
    let keys = order
        .iter()
        .map(|&u| ReportingUnitKey {
            granularity: granularity.clone(),
            values: raw_keys[u as usize].clone(),
        })
        .collect();

    Units {
        granularity: granularity.clone(),
        keys,
        offsets,
        members,
        unit_of,
    }
}

/// One row of the weighted unit-size distribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EcdfRow {
    pub threshold: usize,
    /// Ballots in units of size <= threshold.
    pub voters_in_small_units: usize,
    pub total_voters: usize,
    pub per_100k: f64,
}

impl EcdfRow {
    pub fn rounded(&self) -> u64 {
        self.per_100k.round() as u64
    }
}

/// Voters per 100,000 in units of size at most each threshold.
pub fn unit_size_ecdf(units: &Units, thresholds: &[usize]) -> Result<Vec<EcdfRow>> {
    if units.is_empty() {
        return Err(Error::Empty("no reporting units".into()));
    }
    if thresholds.first().is_some_and(|&t| t < 1) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "thresholds must be >= 1 and strictly increasing".into(),
        ));
    }
    let mut sizes: Vec<usize> = (0..units.len()).map(|u| units.size(u)).collect();
    sizes.sort_unstable();
    let total: usize = sizes.iter().sum();
    let mut rows = Vec::with_capacity(thresholds.len());
    let mut idx = 0;
    let mut acc = 0usize;
    for &t in thresholds {
        while idx < sizes.len() && sizes[idx] <= t {
            acc += sizes[idx];
            idx += 1;
        }
        rows.push(EcdfRow {
            threshold: t,
            voters_in_small_units: acc,
            total_voters: total,
            per_100k: 100_000.0 * acc as f64 / total as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballot::{CastVoteRecord, ContestSpec, VoteMethod};

    fn election(rows: &[(&str, &str, VoteMethod)]) -> Election {
        let records = rows.iter().enumerate().map(|(i, (p, s, m))| CastVoteRecord {
            ballot_id: format!("b{i}"),
            precinct: p.to_string(),
            ballot_style: s.to_string(),
            vote_method: m.clone(),
            marks: Default::default(),
        });
        Election::from_records(vec![ContestSpec::new("c", &["a", "b"])], records).unwrap()
    }

    #[test]
    fn partitions_and_orders_by_key() {
        use VoteMethod::*;
        let e = election(&[
            ("p2", "s", Mail),
            ("p1", "s", InPerson),
            ("p1", "s", Mail),
            ("p1", "t", Mail),
        ]);
        let u = build_reporting_units(&e, &Granularity::BallotEquivalent);
        assert_eq!(u.len(), 4);
        let p = build_reporting_units(&e, &Granularity::Precinct);
        assert_eq!(p.len(), 2);
        assert_eq!(p.key(0).values, vec!["p1"]);
        assert_eq!(p.members(0), &[1, 2, 3]);
        assert_eq!(p.unit_of(0), 1);
    }

    #[test]
    fn single_value_gives_single_unit() {
        let e = election(&[("p", "s", VoteMethod::Mail), ("p", "t", VoteMethod::InPerson)]);
        assert_eq!(build_reporting_units(&e, &Granularity::Precinct).len(), 1);
    }

    #[test]
    fn parent_drops_method_then_style() {
        assert_eq!(
            Granularity::BallotEquivalent.parent(),
            Some(Granularity::PrecinctStyle)
        );
        assert_eq!(Granularity::PrecinctStyle.parent(), Some(Granularity::Precinct));
        assert_eq!(Granularity::PrecinctMethod.parent(), Some(Granularity::Precinct));
        assert_eq!(Granularity::Precinct.parent(), None);
        assert_eq!(Granularity::Style.parent(), None);
        assert_eq!(
            Granularity::Custom(vec![Dimension::Style, Dimension::Method]).parent(),
            Some(Granularity::Style)
        );
    }

    #[test]
    fn granularity_parses_and_displays() {
        for g in ["precinct", "precinct_method", "ballot_equivalent", "custom:style+method"] {
            let parsed: Granularity = g.parse().unwrap();
            assert_eq!(parsed.to_string(), g);
        }
        assert!("county".parse::<Granularity>().is_err());
    }

    fn units_of_sizes(sizes: &[usize]) -> Units {
        let mut groups = Vec::new();
        let mut next = 0u32;
        for (i, &s) in sizes.iter().enumerate() {
            let ballots: Vec<u32> = (next..next + s as u32).collect();
            next += s as u32;
            groups.push((
                ReportingUnitKey::new(Granularity::Precinct, vec![format!("p{i}")]).unwrap(),
                ballots,
            ));
        }
        Units::from_groups(Granularity::Precinct, next as usize, groups).unwrap()
    }

    #[test]
    fn ecdf_hand_computed() {
        // sizes {1,2,7,90}: units <= 5 hold 3 of 100 voters
        let u = units_of_sizes(&[1, 2, 7, 90]);
        let rows = unit_size_ecdf(&u, &[5]).unwrap();
        assert_eq!(rows[0].voters_in_small_units, 3);
        assert_eq!(rows[0].per_100k, 3000.0);
    }

    #[test]
    fn ecdf_singletons_and_errors() {
        let u = units_of_sizes(&[1, 1, 1]);
        assert_eq!(unit_size_ecdf(&u, &[1]).unwrap()[0].per_100k, 100_000.0);
        assert!(unit_size_ecdf(&u, &[2, 2]).is_err());
        assert!(unit_size_ecdf(&u, &[0]).is_err());
        let empty = Units::from_groups(Granularity::Precinct, 0, vec![]).unwrap();
        assert!(matches!(unit_size_ecdf(&empty, &[1]), Err(Error::Empty(_))));
    }
}
