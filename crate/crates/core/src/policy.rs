//! Ex-post mitigation: size-threshold redaction, quasi-identifier coarsening
//! and count noising.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::ballot::{normalize_code, Election, MarkCode, QuasiIds, VoteMethod};
use crate::error::{Error, Result};
use crate::revelation::{
    any_contest_summary, revealed_ballots, RevelationEngine, RevelationOptions, RevelationSummary,
    StyleClassifier, UnitTallies,
};
use crate::units::{build_reporting_units, Granularity, ReportingUnitKey, Units};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedactionAction {
    #[default]
    MergeIntoParentUnit,
    SuppressChoiceCounts,
    SuppressQuasiIdentifier,
}

impl RedactionAction {
    pub fn label(self) -> &'static str {
        match self {
            RedactionAction::MergeIntoParentUnit => "merge_into_parent_unit",
            RedactionAction::SuppressChoiceCounts => "suppress_choice_counts",
            RedactionAction::SuppressQuasiIdentifier => "suppress_quasi_identifier",
        }
    }
}

/// Act on every reporting unit with `k` or fewer ballots; `k = 0` is no redaction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionPolicy {
    pub k: usize,
    #[serde(default)]
    pub action: RedactionAction,
}

/// A unit as released after redaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublishedUnit {
    pub key: ReportingUnitKey,
    pub ballots: Vec<u32>,
    /// Released with its size only, no choice counts.
    pub suppressed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PolicyOutcome {
    pub k: usize,
    pub action: RedactionAction,
    pub total_ballots: usize,
    /// Ballots publicly revealed before redaction (any contest).
    pub revelations_before: usize,
    /// Vulnerable ballots left outside every redacted unit.
    pub revelations_after: usize,
    pub ballots_redacted_vulnerable: usize,
    pub ballots_redacted_not_vulnerable: usize,
    /// Public revelation recomputed on the released units, which can stay
    /// positive when a merged unit is itself unanimous.
    pub residual_public_after: usize,
    pub published_units: usize,
}

#[derive(Clone, Debug)]
pub struct RedactionResult {
    pub published: Vec<PublishedUnit>,
    pub outcome: PolicyOutcome,
    pub warnings: Vec<String>,
}

/// Project a key onto a coarser granularity whose dimensions it carries.
fn project(key: &ReportingUnitKey, to: &Granularity) -> Option<ReportingUnitKey> {
    let values = to
        .dims()
        .iter()
        .map(|&d| key.value(d).map(str::to_string))
        .collect::<Option<Vec<_>>>()?;
    Some(ReportingUnitKey {
        granularity: to.clone(),
        values,
    })
}

/// Ballots publicly revealed in any eligible contest of a released unit.
fn public_in_group(election: &Election, ballots: &[u32], opts: &RevelationOptions) -> bool {
    election.contests().iter().enumerate().any(|(c, spec)| {
        if !opts.contest_eligible(spec) {
            return false;
        }
        let mut seen = MarkCode::ABSENT;
        for &b in ballots {
            let m = election.mark(b as usize, c);
            if !m.is_present() {
                continue;
            }
            if seen == MarkCode::ABSENT {
                seen = m;
            } else if seen != m {
                return false;
            }
        }
        seen != MarkCode::ABSENT && opts.mark_eligible(seen)
    })
}

fn merge_to_fixed_point(units: &mut Vec<PublishedUnit>, k: usize, warnings: &mut BTreeSet<String>) {
    loop {
        let mut targets: BTreeSet<ReportingUnitKey> = BTreeSet::new();
        let mut any_small = false;
        for u in units.iter_mut().filter(|u| !u.suppressed && u.ballots.len() <= k) {
            any_small = true;
            match u.key.granularity.parent() {
                Some(parent) => {
                    targets.insert(project(&u.key, &parent).expect("parent dims are a subset"));
                }
                None => {
                    warnings.insert(format!(
                        "no unit coarser than {}; small units suppressed instead of merged",
                        u.key.granularity
                    ));
                    u.suppressed = true;
                }
            }
        }
        if !any_small || targets.is_empty() {
            if !any_small {
                return;
            }
            continue;
        }
        let grans: BTreeSet<Granularity> = targets.iter().map(|t| t.granularity.clone()).collect();
        let mut merged: BTreeMap<ReportingUnitKey, Vec<u32>> = BTreeMap::new();
        let mut kept = Vec::with_capacity(units.len());
        for u in units.drain(..) {
            let hit = (!u.suppressed)
                .then(|| {
                    grans
                        .iter()
                        .filter_map(|g| project(&u.key, g))
                        .find(|p| targets.contains(p))
                })
                .flatten();
            match hit {
                Some(target) => merged.entry(target).or_default().extend(u.ballots),
                None => kept.push(u),
            }
        }
        for (key, mut ballots) in merged {
            ballots.sort_unstable();
            kept.push(PublishedUnit {
                key,
                ballots,
                suppressed: false,
            });
        }
        kept.sort_by(|a, b| a.key.cmp(&b.key));
        *units = kept;
    }
}

/// Pool the small units sharing a parent key under a redacted finest dimension.
fn pool_small(units: Vec<PublishedUnit>, k: usize) -> Vec<PublishedUnit> {
    let mut pooled: BTreeMap<ReportingUnitKey, Vec<u32>> = BTreeMap::new();
    let mut kept = Vec::new();
    for u in units {
        if u.ballots.len() > k {
            kept.push(u);
            continue;
        }
        let dims = u.key.granularity.dims();
        let dropped = u.key.granularity.parent().map_or_else(
            || dims[0],
            |p| *dims.iter().find(|d| !p.has(**d)).expect("parent drops a dimension"),
        );
        let values = dims
            .iter()
            .zip(&u.key.values)
            .map(|(&d, v)| if d == dropped { "[redacted]".to_string() } else { v.clone() })
            .collect();
        let key = ReportingUnitKey {
            granularity: u.key.granularity.clone(),
            values,
        };
        pooled.entry(key).or_default().extend(u.ballots);
    }
    for (key, mut ballots) in pooled {
        ballots.sort_unstable();
        kept.push(PublishedUnit {
            key,
            ballots,
            suppressed: false,
        });
    }
    kept.sort_by(|a, b| a.key.cmp(&b.key));
    kept
}

/// Vulnerability labels at the pre-policy granularity, shared across a k sweep.
struct Baseline {
    units: Units,
    vulnerable: Vec<bool>,
    n_vulnerable: usize,
}

impl Baseline {
    fn new(election: &Election, granularity: &Granularity, opts: &RevelationOptions) -> Baseline {
        let units = build_reporting_units(election, granularity);
        let engine = RevelationEngine::new(election, &units, opts.clone());
        let mut vulnerable = vec![false; election.n_ballots()];
        for b in revealed_ballots(&engine.public()) {
            vulnerable[b as usize] = true;
        }
        let n_vulnerable = vulnerable.iter().filter(|&&v| v).count();
        Baseline {
            units,
            vulnerable,
            n_vulnerable,
        }
    }

    fn redact(&self, election: &Election, policy: &RedactionPolicy, opts: &RevelationOptions) -> RedactionResult {
        let k = policy.k;
        let mut redacted_v = 0;
        let mut redacted_nv = 0;
        for u in 0..self.units.len() {
            if self.units.size(u) <= k {
                for &b in self.units.members(u) {
                    if self.vulnerable[b as usize] {
                        redacted_v += 1;
                    } else {
                        redacted_nv += 1;
                    }
                }
            }
        }
        let mut published: Vec<PublishedUnit> = self
            .units
            .iter()
            .map(|u| PublishedUnit {
                key: u.key.clone(),
                ballots: u.ballots.to_vec(),
                suppressed: false,
            })
            .collect();
        let mut warnings = BTreeSet::new();
        if k > 0 {
            match policy.action {
                RedactionAction::MergeIntoParentUnit => merge_to_fixed_point(&mut published, k, &mut warnings),
                RedactionAction::SuppressChoiceCounts => {
                    for u in published.iter_mut().filter(|u| u.ballots.len() <= k) {
                        u.suppressed = true;
                    }
                }
                RedactionAction::SuppressQuasiIdentifier => published = pool_small(published, k),
            }
        }
        let residual = published
            .iter()
            .filter(|u| !u.suppressed && public_in_group(election, &u.ballots, opts))
            .map(|u| u.ballots.len())
            .sum();
        let outcome = PolicyOutcome {
            k,
            action: policy.action,
            total_ballots: election.n_ballots(),
            revelations_before: self.n_vulnerable,
            revelations_after: self.n_vulnerable - redacted_v,
            ballots_redacted_vulnerable: redacted_v,
            ballots_redacted_not_vulnerable: redacted_nv,
            residual_public_after: residual,
            published_units: published.len(),
        };
        RedactionResult {
            published,
            outcome,
            warnings: warnings.into_iter().collect(),
        }
    }
}

pub fn apply_redaction(
    election: &Election,
    granularity: &Granularity,
    policy: &RedactionPolicy,
    opts: &RevelationOptions,
) -> RedactionResult {
    Baseline::new(election, granularity, opts).redact(election, policy, opts)
}

/// One outcome per threshold, vulnerability fixed at the input granularity.
pub fn tradeoff_curve(
    election: &Election,
    granularity: &Granularity,
    ks: &[usize],
    action: RedactionAction,
    opts: &RevelationOptions,
) -> Result<Vec<PolicyOutcome>> {
    if ks.is_empty() {
        return Err(Error::Config("empty list of redaction thresholds".into()));
    }
    let base = Baseline::new(election, granularity, opts);
    Ok(ks
        .iter()
        .map(|&k| base.redact(election, &RedactionPolicy { k, action }, opts).outcome)
        .collect())
}

/// Which ballots a coarsening rule applies to; unset fields match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleMatch {
    pub precinct: Option<String>,
    pub ballot_style: Option<String>,
    pub vote_method: Option<String>,
    /// `federal_only` or `full`.
    pub style_type: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rewrite {
    pub precinct: Option<String>,
    pub ballot_style: Option<String>,
    pub vote_method: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseningRule {
    #[serde(default)]
    pub when: RuleMatch,
    pub set: Rewrite,
}

impl CoarseningRule {
    pub fn provisional_to_in_person() -> CoarseningRule {
        CoarseningRule {
            when: RuleMatch {
                vote_method: Some("provisional".into()),
                ..Default::default()
            },
            set: Rewrite {
                vote_method: Some("in_person".into()),
                ..Default::default()
            },
        }
    }

    /// Move federal-only ballots into one non-geographic precinct.
    pub fn pool_federal_only(precinct: &str) -> CoarseningRule {
        CoarseningRule {
            when: RuleMatch {
                style_type: Some("federal_only".into()),
                ..Default::default()
            },
            set: Rewrite {
                precinct: Some(precinct.into()),
                ..Default::default()
            },
        }
    }

    fn check(&self) -> Result<()> {
        let set = &self.set;
        if set.precinct.is_none() && set.ballot_style.is_none() && set.vote_method.is_none() {
            return Err(Error::Config("coarsening rule rewrites nothing".into()));
        }
        for v in [&set.precinct, &set.ballot_style, &set.vote_method].into_iter().flatten() {
            if normalize_code(v).is_empty() {
                return Err(Error::Config("coarsening rule rewrites to an empty value".into()));
            }
        }
        match self.when.style_type.as_deref().map(normalize_code).as_deref() {
            None | Some("federal_only") | Some("full") => Ok(()),
            Some(other) => Err(Error::Config(format!("unknown style type `{other}`"))),
        }
    }

    fn matches(&self, qi: &QuasiIds, classifier: &StyleClassifier) -> bool {
        let eq = |want: &Option<String>, have: &str| want.as_ref().is_none_or(|w| normalize_code(w) == have);
        eq(&self.when.precinct, &qi.precinct)
            && eq(&self.when.ballot_style, &qi.ballot_style)
            && eq(&self.when.vote_method, qi.vote_method.label())
            && self.when.style_type.as_ref().is_none_or(|t| {
                (normalize_code(t) == "federal_only") == classifier.is_federal_only(&qi.ballot_style)
            })
    }

    fn apply(&self, mut qi: QuasiIds) -> QuasiIds {
        if let Some(p) = &self.set.precinct {
            qi.precinct = normalize_code(p);
        }
        if let Some(s) = &self.set.ballot_style {
            qi.ballot_style = normalize_code(s);
        }
        if let Some(m) = &self.set.vote_method {
            qi.vote_method = VoteMethod::parse(m);
        }
        qi
    }
}

#[derive(Clone, Debug)]
pub struct CoarseningResult {
    pub election: Election,
    pub rewritten: usize,
    pub before: RevelationSummary,
    pub after: RevelationSummary,
}

/// Rewrite quasi-identifiers; the first matching rule wins. Summaries are
/// public revelation at `granularity` before and after.
pub fn apply_coarsening(
    election: &Election,
    rules: &[CoarseningRule],
    granularity: &Granularity,
    classifier: &StyleClassifier,
    opts: &RevelationOptions,
) -> Result<CoarseningResult> {
    for r in rules {
        r.check()?;
    }
    let mut rewritten = 0;
    let coarse = election.with_quasi_ids(|_, qi| {
        Ok(match rules.iter().find(|r| r.matches(&qi, classifier)) {
            Some(rule) => {
                let new = rule.apply(qi.clone());
                if new != qi {
                    rewritten += 1;
                }
                new
            }
            None => qi,
        })
    })?;
    let summarize = |e: &Election| {
        let units = build_reporting_units(e, granularity);
        let f = RevelationEngine::new(e, &units, opts.clone()).public();
        any_contest_summary(granularity, &f, e.n_ballots())
    };
    Ok(CoarseningResult {
        before: summarize(election)?,
        after: summarize(&coarse)?,
        election: coarse,
        rewritten,
    })
}

/// Discrete uniform noise on `[-magnitude, magnitude]` added to each count.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoisingSpec {
    pub magnitude: u32,
    /// Privacy budget for the feasibility check.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NoisedCount {
    pub unit_key: String,
    pub contest: String,
    pub choice: String,
    pub true_count: u64,
    pub noised_count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LeaderFlip {
    pub unit_key: String,
    pub contest: String,
    pub true_leader: Option<String>,
    pub noised_leader: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FidelityReport {
    pub unit_contests: usize,
    pub flips: Vec<LeaderFlip>,
}

#[derive(Clone, Debug)]
pub struct NoisedTallies {
    pub counts: Vec<NoisedCount>,
    pub fidelity: FidelityReport,
}

/// Strict leader; `None` on a tie for first.
fn leader(counts: &[u64]) -> Option<usize> {
    let max = *counts.iter().max()?;
    let mut at_max = counts.iter().enumerate().filter(|(_, &c)| c == max);
    let first = at_max.next()?.0;
    at_max.next().is_none().then_some(first)
}

/// Perturb every candidate count of every unit-contest, truncating at 0.
pub fn apply_noising(tallies: &UnitTallies, spec: &NoisingSpec, seed: u64) -> NoisedTallies {
    let m = spec.magnitude as i64;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut counts = Vec::new();
    let mut flips = Vec::new();
    let mut unit_contests = 0;
    for (unit, contest, _, marks) in tallies.iter() {
        let cspec = &tallies.contests()[contest];
        if cspec.choices.is_empty() {
            continue;
        }
        unit_contests += 1;
        let mut truth = vec![0u64; cspec.choices.len()];
        for &(code, c) in marks {
            if let Some(i) = code.candidate_index() {
                truth[i] = c as u64;
            }
        }
        let noised: Vec<u64> = truth
            .iter()
            .map(|&t| {
                let delta = if m == 0 { 0 } else { rng.gen_range(-m..=m) };
                (t as i64 + delta).max(0) as u64
            })
            .collect();
        let key = tallies.key(unit).to_string();
        let (lt, ln) = (leader(&truth), leader(&noised));
        if lt != ln {
            let name = |i: Option<usize>| i.map(|i| cspec.choices[i].clone());
            flips.push(LeaderFlip {
                unit_key: key.clone(),
                contest: cspec.id.clone(),
                true_leader: name(lt),
                noised_leader: name(ln),
            });
        }
        for (i, choice) in cspec.choices.iter().enumerate() {
            counts.push(NoisedCount {
                unit_key: key.clone(),
                contest: cspec.id.clone(),
                choice: choice.clone(),
                true_count: truth[i],
                noised_count: noised[i],
            });
        }
    }
    NoisedTallies {
        counts,
        fidelity: FidelityReport { unit_contests, flips },
    }
}

/// Share of seeds for which a two-choice count with the given margin
/// changes leader under noise.
pub fn flip_rate(leader_votes: u64, margin: u64, magnitude: u32, trials: u64, seed: u64) -> f64 {
    let m = magnitude as i64;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let truth = [leader_votes, leader_votes.saturating_sub(margin)];
    let mut flipped = 0;
    for _ in 0..trials {
        let noised: Vec<u64> = truth
            .iter()
            .map(|&t| {
                let delta = if m == 0 { 0 } else { rng.gen_range(-m..=m) };
                (t as i64 + delta).max(0) as u64
            })
            .collect();
        if leader(&noised) != leader(&truth) {
            flipped += 1;
        }
    }
    flipped as f64 / trials.max(1) as f64
}

/// A winner-reporting release of a two-candidate count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mechanism")]
pub enum Mechanism {
    /// Reports the exact winner (or a tie).
    Noiseless,
    /// Reports the same answer whatever the data.
    Constant,
    /// Adds independent uniform noise on `[-magnitude, magnitude]` to each count.
    UniformNoise { magnitude: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpVerdict {
    pub mechanism: Mechanism,
    pub margin: u64,
    pub epsilon: f64,
    /// Worst `ln(Pr[M(D) = m] / Pr[M(D') = m])` over outcomes and both
    /// directions; `None` when unbounded.
    pub log_ratio: Option<f64>,
    pub feasible: bool,
}

/// Outcome distribution (leader wins, tie, trailer wins) for a count difference.
fn winner_distribution(mechanism: Mechanism, diff: i64) -> [f64; 3] {
    let classify = |d: i64| match d.cmp(&0) {
        std::cmp::Ordering::Greater => 0,
        std::cmp::Ordering::Equal => 1,
        std::cmp::Ordering::Less => 2,
    };
    let mut p = [0.0; 3];
    match mechanism {
        Mechanism::Constant => p[1] = 1.0,
        Mechanism::Noiseless => p[classify(diff)] = 1.0,
        Mechanism::UniformNoise { magnitude } => {
            let m = magnitude as i64;
            let w = 1.0 / ((2 * m + 1) * (2 * m + 1)) as f64;
            for x in -m..=m {
                for y in -m..=m {
                    p[classify(diff + x - y)] += w;
                }
            }
        }
    }
    p
}

/// Whether a winner-reporting mechanism meets `epsilon` for a contest won by
/// `margin` votes, the neighbouring dataset dropping one ballot cast for the
/// leader. Counts are assumed large enough that noise is never truncated.
pub fn dp_feasibility_check(mechanism: Mechanism, margin: u64, epsilon: f64) -> Result<DpVerdict> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParams(format!("epsilon {epsilon} must be non-negative")));
    }
    let d = margin as i64;
    let here = winner_distribution(mechanism, d);
    let mut worst = 0.0f64;
    let mut unbounded = false;
    {
        let there = winner_distribution(mechanism, d - 1);
        for (a, b) in here.iter().zip(&there) {
            for (num, den) in [(a, b), (b, a)] {
                if *num > 0.0 && *den == 0.0 {
                    unbounded = true;
                } else if *num > 0.0 {
                    worst = worst.max((num / den).ln());
                }
            }
        }
    }
    let log_ratio = (!unbounded).then_some(worst);
    Ok(DpVerdict {
        mechanism,
        margin,
        epsilon,
        feasible: log_ratio.is_some_and(|r| r <= epsilon + 1e-12),
        log_ratio,
    })
}

/// Declarative policy file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyFile {
    pub redaction: Option<RedactionSweep>,
    pub coarsening: Vec<CoarseningRule>,
    pub noising: Option<NoisingSweep>,
    pub dp: Option<DpCheck>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedactionSweep {
    pub k: Vec<usize>,
    #[serde(default)]
    pub action: RedactionAction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisingSweep {
    pub magnitude: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpCheck {
    pub epsilon: f64,
    pub margins: Vec<u64>,
    #[serde(default)]
    pub noise_magnitude: u32,
}

impl PolicyFile {
    pub fn from_toml_str(text: &str) -> Result<PolicyFile> {
        let p: PolicyFile = toml::from_str(text)?;
        for r in &p.coarsening {
            r.check()?;
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<PolicyFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
