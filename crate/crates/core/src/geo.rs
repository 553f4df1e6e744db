//! Agreement between revealed votes and the voters around them.
//!
//! Distances run centroid to centroid, so every voter of a precinct sits at
//! its centroid.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ballot::{normalize_code, Election, MarkCode};
use crate::error::{Error, Result};
use crate::revelation::RevelationFinding;
use crate::units::{Dimension, Units};

pub const EARTH_RADIUS_MILES: f64 = 3958.761;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Latitude/longitude in degrees, great-circle distance on a sphere.
    #[default]
    Haversine,
    /// Coordinates already in miles on a plane.
    Planar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecinctCentroid {
    pub precinct: String,
    pub lat: f64,
    pub lon: f64,
}

pub fn haversine_miles(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    let a = a.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_MILES * a.sqrt().atan2((1.0 - a).sqrt())
}

/// One centroid per precinct.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Centroids {
    metric: Metric,
    points: BTreeMap<String, (f64, f64)>,
}

impl Centroids {
    pub fn new(metric: Metric, centroids: impl IntoIterator<Item = PrecinctCentroid>) -> Result<Centroids> {
        let mut points = BTreeMap::new();
        for c in centroids {
            if metric == Metric::Haversine && (c.lat.abs() > 90.0 || c.lon.abs() > 180.0) {
                return Err(Error::InvalidRecord(format!(
                    "centroid of `{}` out of range: ({}, {})",
                    c.precinct, c.lat, c.lon
                )));
            }
            if !c.lat.is_finite() || !c.lon.is_finite() {
                return Err(Error::InvalidRecord(format!("centroid of `{}` is not finite", c.precinct)));
            }
            let key = normalize_code(&c.precinct);
            if points.insert(key.clone(), (c.lat, c.lon)).is_some() {
                return Err(Error::InvalidRecord(format!("two centroids for precinct `{key}`")));
            }
        }
        Ok(Centroids { metric, points })
    }

    /// Delimited text with columns `precinct,lat,lon`.
    pub fn read<R: Read>(reader: R, metric: Metric) -> Result<Centroids> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows: Vec<PrecinctCentroid> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        Centroids::new(metric, rows)
    }

    pub fn load(path: &Path, metric: Metric) -> Result<Centroids> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Centroids::read(f, metric)
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, precinct: &str) -> bool {
        self.points.contains_key(precinct)
    }

    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        let (p, q) = (self.points.get(a)?, self.points.get(b)?);
        Some(self.between(*p, *q))
    }

    fn between(&self, p: (f64, f64), q: (f64, f64)) -> f64 {
        match self.metric {
            Metric::Haversine => haversine_miles(p.0, p.1, q.0, q.1),
            Metric::Planar => ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt(),
        }
    }
}

/// Precincts whose centroid lies within `miles` of the origin's (origin included).
pub fn within_radius(centroids: &Centroids, origin: &str, miles: f64) -> Result<BTreeSet<String>> {
    let o = *centroids
        .points
        .get(origin)
        .ok_or_else(|| Error::UnknownPrecinct(origin.to_string()))?;
    Ok(centroids
        .points
        .iter()
        .filter(|(name, p)| name.as_str() == origin || centroids.between(o, **p) <= miles)
        .map(|(name, _)| name.clone())
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Voters who chose a candidate in the contest.
    #[default]
    CandidateVotes,
    /// Every ballot carrying the contest, residual votes included.
    AllBallots,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgreementPoint {
    pub unit_key: String,
    pub precinct: String,
    pub radius: f64,
    pub revealed_choice: String,
    pub agreement: f64,
    pub weight: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanPoint {
    pub radius: f64,
    pub revealed_choice: String,
    pub agreement: f64,
    pub weight: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AgreementCurve {
    pub contest: String,
    pub points: Vec<AgreementPoint>,
    /// Per-choice means weighted by revealed voters.
    pub means: Vec<MeanPoint>,
    /// Revealed units left out for want of a centroid.
    pub excluded_units: Vec<String>,
    /// Precincts with ballots but no centroid; never counted as neighbours.
    pub precincts_without_centroid: Vec<String>,
}

/// Agreement of revealed votes in `contest` with every ballot in the
/// precincts within each radius.
pub fn agreement_curve(
    findings: &[RevelationFinding],
    election: &Election,
    units: &Units,
    contest: &str,
    centroids: &Centroids,
    radii: &[f64],
    denominator: Denominator,
) -> Result<AgreementCurve> {
    let c = election
        .contest_index(contest)
        .ok_or_else(|| Error::UnknownContest(contest.to_string()))?;
    if !radii.contains(&0.0) {
        return Err(Error::Config("agreement radii must include 0".into()));
    }
    if radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Config("agreement radii must be non-negative".into()));
    }
    if !units.granularity().has(Dimension::Precinct) {
        return Err(Error::Config(format!(
            "agreement needs precinct-level units, not {}",
            units.granularity()
        )));
    }
    let spec = election.contest(c);
    let n_choices = spec.choices.len();

    // per precinct: candidate counts then the all-ballots total
    let mut tallies: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for b in 0..election.n_ballots() {
        let code = election.mark(b, c);
        if !code.is_present() {
            continue;
        }
        let row = tallies
            .entry(election.precinct(b))
            .or_insert_with(|| vec![0; n_choices + 1]);
        if let Some(i) = code.candidate_index() {
            row[i] += 1;
        }
        row[n_choices] += 1;
    }
    let missing: Vec<String> = tallies
        .keys()
        .filter(|p| !centroids.contains(p))
        .map(|p| p.to_string())
        .collect();

    let mut groups: BTreeMap<(u32, MarkCode), u32> = BTreeMap::new();
    for f in findings.iter().filter(|f| f.contest as usize == c) {
        *groups.entry((f.unit, f.revealed)).or_default() += 1;
    }

    let mut curve = AgreementCurve {
        contest: spec.id.clone(),
        precincts_without_centroid: missing,
        ..Default::default()
    };
    let mut sums: BTreeMap<(u64, String), (f64, u64)> = BTreeMap::new();
    for ((unit, code), weight) in groups {
        let key = units.key(unit as usize);
        let precinct = key.value(Dimension::Precinct).expect("checked above");
        let Some(choice) = code.candidate_index() else {
            // residual marks have no neighbours to agree with
            continue;
        };
        if !centroids.contains(precinct) {
            curve.excluded_units.push(key.to_string());
            continue;
        }
        for &radius in radii {
            let (mut agree, mut total) = (0u64, 0u64);
            for p in within_radius(centroids, precinct, radius)? {
                if let Some(row) = tallies.get(p.as_str()) {
                    agree += row[choice];
                    total += match denominator {
                        Denominator::CandidateVotes => row[..n_choices].iter().sum::<u64>(),
                        Denominator::AllBallots => row[n_choices],
                    };
                }
            }
            let agreement = if total == 0 { 0.0 } else { agree as f64 / total as f64 };
            let name = spec.choices[choice].clone();
            let s = sums.entry((radius.to_bits(), name.clone())).or_default();
            s.0 += agreement * weight as f64;
            s.1 += weight as u64;
            curve.points.push(AgreementPoint {
                unit_key: key.to_string(),
                precinct: precinct.to_string(),
                radius,
                revealed_choice: name,
                agreement,
                weight,
            });
        }
    }
    let mut means: Vec<MeanPoint> = sums
        .into_iter()
        .map(|((bits, choice), (sum, weight))| MeanPoint {
            radius: f64::from_bits(bits),
            revealed_choice: choice,
            agreement: sum / weight as f64,
            weight,
        })
        .collect();
    means.sort_by(|a, b| {
        a.revealed_choice
            .cmp(&b.revealed_choice)
            .then(a.radius.total_cmp(&b.radius))
    });
    curve.means = means;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planar(points: &[(&str, f64, f64)]) -> Centroids {
        Centroids::new(
            Metric::Planar,
            points.iter().map(|(p, x, y)| PrecinctCentroid {
                precinct: p.to_string(),
                lat: *x,
                lon: *y,
            }),
        )
        .unwrap()
    }

    #[test]
    fn radius_zero_is_origin() {
        let c = planar(&[("a", 0.0, 0.0), ("b", 1.0, 0.0)]);
        assert_eq!(within_radius(&c, "a", 0.0).unwrap(), ["a".to_string()].into());
        assert!(within_radius(&c, "zz", 1.0).is_err());
    }

    #[test]
    fn haversine_cutoff() {
        // one degree of latitude is R * pi / 180 miles
        let per_degree = EARTH_RADIUS_MILES * std::f64::consts::PI / 180.0;
        let at = |miles: f64| PrecinctCentroid {
            precinct: format!("p{miles}"),
            lat: miles / per_degree,
            lon: 0.0,
        };
        let mut pts = vec![PrecinctCentroid {
            precinct: "o".into(),
            lat: 0.0,
            lon: 0.0,
        }];
        pts.extend([at(5.0), at(9.9), at(10.1)]);
        let c = Centroids::new(Metric::Haversine, pts).unwrap();
        let got = within_radius(&c, "o", 10.0).unwrap();
        assert_eq!(got, ["o", "p5", "p9.9"].iter().map(|s| s.to_string()).collect());
    }

    #[test]
    fn antipodes_are_far() {
        let d = haversine_miles(10.0, 20.0, -10.0, -160.0);
        assert!((d - EARTH_RADIUS_MILES * std::f64::consts::PI).abs() < 1e-3);
        assert!(d > 12_000.0);
    }

    #[test]
    fn out_of_range_centroid_rejected() {
        let bad = PrecinctCentroid {
            precinct: "x".into(),
            lat: 91.0,
            lon: 0.0,
        };
        assert!(Centroids::new(Metric::Haversine, [bad]).is_err());
    }

    #[test]
    fn reads_delimited_text() {
        let c = Centroids::read("precinct,lat,lon\nA,33.4,-112.0\n".as_bytes(), Metric::Haversine).unwrap();
        assert!(c.contains("a"));
    }
}
