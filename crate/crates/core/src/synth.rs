//! Seeded synthetic elections with known revelation ground truth.
//!
//! Each voter abstains with probability `s` and otherwise picks a choice from
//! `w`, optionally re-drawn per precinct from a Dirichlet around `w`. Explicit
//! units fix exact mark counts; plants force a unit's contest to one choice.
//! Ground truth is computed here by comparing every ballot with every other
//! ballot of its unit, without going through [`crate::revelation`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Dirichlet, Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::ballot::{normalize_code, ContestSpec, Election, MarkCode, QuasiIds, VoteMethod};
use crate::canvass::CertifiedTotals;
use crate::error::{Error, Result};
use crate::ingest::{write_cvr, FormatDescriptor, Layout};
use crate::revelation::{RevelationKind, Share};
use crate::units::{Dimension, Granularity};
use crate::voterfile::{write_voted_file, CoarseMethod, VotedRecord};

pub const FEDERAL_ONLY_STYLE: &str = "federal_only";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthContest {
    pub id: String,
    pub choices: Vec<String>,
    #[serde(default)]
    pub federal: bool,
    #[serde(default = "one")]
    pub vote_for: u32,
    /// Support given a vote; uniform when absent.
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    /// Abstention (undervote) probability.
    #[serde(default)]
    pub s: f64,
    /// Per-precinct support drawn from Dirichlet(concentration * w).
    #[serde(default)]
    pub concentration: Option<f64>,
    /// Restrict the contest to these ballot styles.
    #[serde(default)]
    pub styles: Option<Vec<String>>,
}

fn one() -> u32 {
    1
}

impl SynthContest {
    pub fn new(id: &str, choices: &[&str]) -> SynthContest {
        SynthContest {
            id: id.into(),
            choices: choices.iter().map(|c| c.to_string()).collect(),
            federal: false,
            vote_for: 1,
            w: None,
            s: 0.0,
            concentration: None,
            styles: None,
        }
    }

    fn support(&self) -> Vec<f64> {
        self.w
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.choices.len() as f64; self.choices.len()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthPrecinct {
    pub id: String,
    pub size: usize,
    #[serde(default = "default_styles")]
    pub styles: Vec<String>,
    #[serde(default)]
    pub federal_only_rate: f64,
}

fn default_styles() -> Vec<String> {
    vec!["s1".into()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPrecincts {
    pub count: usize,
    pub min_size: usize,
    pub max_size: usize,
    #[serde(default = "one")]
    pub styles: u32,
    #[serde(default)]
    pub federal_only_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodMix {
    pub mail: f64,
    pub in_person: f64,
    pub provisional: f64,
}

impl Default for MethodMix {
    fn default() -> Self {
        MethodMix {
            mail: 0.6,
            in_person: 0.37,
            provisional: 0.03,
        }
    }
}

/// A unit with exact per-contest mark counts (choice, or `[undervote]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitUnit {
    pub precinct: String,
    pub style: String,
    pub method: String,
    pub ballots: usize,
    pub marks: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Force every ballot of a ballot-equivalent unit to one choice in a contest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plant {
    /// `precinct|style|method`
    pub unit: String,
    pub contest: String,
    pub choice: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub enabled: bool,
    pub granularities: Vec<Granularity>,
    pub alphas: Vec<u32>,
    pub thresholds: Vec<f64>,
    pub count_all_abstain: bool,
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec {
            enabled: true,
            granularities: vec![Granularity::BallotEquivalent],
            alphas: vec![1],
            thresholds: vec![0.95],
            count_all_abstain: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub contests: Vec<SynthContest>,
    pub precincts: Vec<SynthPrecinct>,
    pub random_precincts: Option<RandomPrecincts>,
    pub method_mix: MethodMix,
    pub units: Vec<ExplicitUnit>,
    pub planted: Vec<Plant>,
    pub truth: TruthSpec,
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<SynthSpec> {
        let spec: SynthSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<SynthSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// One precinct, one style: 20 mail ballots (19 trump, 1 biden) and 10
    /// in-person ballots (all trump), plus a referendum split 12/8 and 6/4.
    pub fn worked_example() -> SynthSpec {
        let counts = |pairs: &[(&str, usize)]| {
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect::<BTreeMap<_, _>>()
        };
        let mut president = SynthContest::new("president", &["trump", "biden"]);
        president.federal = true;
        SynthSpec {
            contests: vec![president, SynthContest::new("referendum", &["yes", "no"])],
            units: vec![
                ExplicitUnit {
                    precinct: "a".into(),
                    style: "x".into(),
                    method: "mail".into(),
                    ballots: 20,
                    marks: [
                        ("president".to_string(), counts(&[("trump", 19), ("biden", 1)])),
                        ("referendum".to_string(), counts(&[("yes", 12), ("no", 8)])),
                    ]
                    .into(),
                },
                ExplicitUnit {
                    precinct: "a".into(),
                    style: "x".into(),
                    method: "in_person".into(),
                    ballots: 10,
                    marks: [
                        ("president".to_string(), counts(&[("trump", 10)])),
                        ("referendum".to_string(), counts(&[("yes", 6), ("no", 4)])),
                    ]
                    .into(),
                },
            ],
            ..Default::default()
        }
    }

    /// Random precincts of `min..=max` ballots with two styles and some
    /// federal-only ballots.
    pub fn random(seed: u64, precincts: usize, min_size: usize, max_size: usize, contests: usize) -> SynthSpec {
        let contests = (0..contests)
            .map(|i| {
                let mut c = match i % 3 {
                    0 => SynthContest::new(&format!("c{i:02}"), &["a", "b"]),
                    1 => SynthContest::new(&format!("c{i:02}"), &["a", "b", "c"]),
                    _ => SynthContest::new(&format!("c{i:02}"), &["yes", "no"]),
                };
                c.federal = i == 0;
                c.s = 0.02 + 0.01 * (i % 5) as f64;
                c.w = Some(match i % 3 {
                    0 => vec![0.7, 0.3],
                    1 => vec![0.5, 0.3, 0.2],
                    _ => vec![0.55, 0.45],
                });
                c.concentration = Some(8.0);
                c
            })
            .collect();
        SynthSpec {
            seed,
            contests,
            random_precincts: Some(RandomPrecincts {
                count: precincts,
                min_size,
                max_size,
                styles: 2,
                federal_only_rate: 0.01,
            }),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        let mut ids = BTreeSet::new();
        for c in &self.contests {
            if !ids.insert(normalize_code(&c.id)) {
                return bad(format!("contest `{}` listed twice", c.id));
            }
            let w = c.support();
            if w.len() != c.choices.len() {
                return bad(format!("contest `{}`: {} weights for {} choices", c.id, w.len(), c.choices.len()));
            }
            if !c.choices.is_empty() && ((w.iter().sum::<f64>() - 1.0).abs() > 1e-9 || w.iter().any(|p| !(0.0..=1.0).contains(p))) {
                return bad(format!("contest `{}`: weights must be probabilities summing to 1", c.id));
            }
            if !(0.0..=1.0).contains(&c.s) {
                return bad(format!("contest `{}`: abstention {} outside [0, 1]", c.id, c.s));
            }
            if c.concentration.is_some_and(|k| !(k > 0.0)) {
                return bad(format!("contest `{}`: concentration must be positive", c.id));
            }
        }
        let m = &self.method_mix;
        let mix = [m.mail, m.in_person, m.provisional];
        if mix.iter().any(|p| !(*p >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("method mix must be probabilities summing to 1".into());
        }
        for p in &self.precincts {
            if p.styles.is_empty() || !(0.0..=1.0).contains(&p.federal_only_rate) {
                return bad(format!("precinct `{}` needs a style and a rate in [0, 1]", p.id));
            }
        }
        if let Some(r) = &self.random_precincts {
            if r.min_size > r.max_size || r.styles == 0 || !(0.0..=1.0).contains(&r.federal_only_rate) {
                return bad("random precincts need min_size <= max_size, a style and a rate in [0, 1]".into());
            }
        }
        for u in &self.units {
            if u.ballots == 0 {
                return bad(format!("explicit unit {}|{}|{} is empty", u.precinct, u.style, u.method));
            }
        }
        for t in &self.truth.thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return bad(format!("truth threshold {t} outside (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Ground-truth findings of one kind at one granularity, as
/// (ballot index, contest index, revealed mark).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruthSet {
    pub granularity: Granularity,
    pub kind: RevelationKind,
    pub findings: BTreeSet<(u32, u16, MarkCode)>,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub election: Election,
    pub roster: Vec<VotedRecord>,
    pub truth: Vec<TruthSet>,
    pub certified: CertifiedTotals,
}

impl SynthOutput {
    pub fn truth_for(&self, granularity: &Granularity, kind: RevelationKind) -> Option<&TruthSet> {
        self.truth
            .iter()
            .find(|t| &t.granularity == granularity && t.kind == kind)
    }
}

struct Draft {
    qi: QuasiIds,
    row: Vec<MarkCode>,
}

fn method_of(i: usize) -> VoteMethod {
    [VoteMethod::Mail, VoteMethod::InPerson, VoteMethod::Provisional][i].clone()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let contests: Vec<ContestSpec> = spec
        .contests
        .iter()
        .map(|c| ContestSpec {
            id: normalize_code(&c.id),
            title: c.id.clone(),
            choices: c.choices.iter().map(|x| normalize_code(x)).collect(),
            vote_for: c.vote_for,
            federal: c.federal,
        })
        .collect();
    let on_style = |c: usize, style: &str| {
        let sc = &spec.contests[c];
        if style == FEDERAL_ONLY_STYLE && !sc.federal {
            return false;
        }
        sc.styles
            .as_ref()
            .is_none_or(|s| s.iter().any(|x| normalize_code(x) == style))
    };

    let mut precincts = spec.precincts.clone();
    let mut master = ChaCha20Rng::seed_from_u64(spec.seed);
    if let Some(r) = &spec.random_precincts {
        for i in 0..r.count {
            precincts.push(SynthPrecinct {
                id: format!("p{i:05}"),
                size: master.gen_range(r.min_size..=r.max_size),
                styles: (1..=r.styles).map(|s| format!("s{s}")).collect(),
                federal_only_rate: r.federal_only_rate,
            });
        }
    }

    let methods = WeightedIndex::new([
        spec.method_mix.mail,
        spec.method_mix.in_person,
        spec.method_mix.provisional,
    ])
    .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut drafts: Vec<Draft> = Vec::new();
    for (pi, p) in precincts.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(pi as u64 + 1);
        let supports: Vec<Vec<f64>> = spec
            .contests
            .iter()
            .map(|c| match (c.concentration, c.choices.len()) {
                (Some(k), n) if n >= 2 => {
                    let alpha: Vec<f64> = c.support().iter().map(|w| (w * k).max(1e-3)).collect();
                    Dirichlet::new(&alpha).expect("positive alpha").sample(&mut rng)
                }
                _ => c.support(),
            })
            .collect();
        let pickers: Vec<Option<WeightedIndex<f64>>> =
            supports.iter().map(|w| WeightedIndex::new(w).ok()).collect();
        for _ in 0..p.size {
            let style = if rng.gen_bool(p.federal_only_rate) {
                FEDERAL_ONLY_STYLE.to_string()
            } else {
                normalize_code(p.styles.choose(&mut rng).expect("validated"))
            };
            let qi = QuasiIds {
                precinct: normalize_code(&p.id),
                ballot_style: style,
                vote_method: method_of(methods.sample(&mut rng)),
            };
            let row = (0..contests.len())
                .map(|c| {
                    if !on_style(c, &qi.ballot_style) {
                        MarkCode::ABSENT
                    } else if rng.gen_bool(spec.contests[c].s) {
                        MarkCode::UNDERVOTE
                    } else {
                        match &pickers[c] {
                            Some(pick) => MarkCode::candidate(pick.sample(&mut rng)),
                            None => MarkCode::UNDERVOTE,
                        }
                    }
                })
                .collect();
            drafts.push(Draft { qi, row });
        }
    }

    for u in &spec.units {
        let qi = QuasiIds {
            precinct: normalize_code(&u.precinct),
            ballot_style: normalize_code(&u.style),
            vote_method: VoteMethod::parse(&u.method),
        };
        let mut rows = vec![vec![MarkCode::ABSENT; contests.len()]; u.ballots];
        for (contest, counts) in &u.marks {
            let c = contests
                .iter()
                .position(|x| x.id == normalize_code(contest))
                .ok_or_else(|| Error::UnknownContest(contest.clone()))?;
            if counts.values().sum::<usize>() != u.ballots {
                return Err(Error::InvalidParams(format!(
                    "explicit unit {}|{}|{}: `{contest}` counts do not sum to {}",
                    u.precinct, u.style, u.method, u.ballots
                )));
            }
            // choices in ballot order, residual marks last
            let mut order: Vec<(MarkCode, usize)> = Vec::new();
            for (choice, &n) in counts {
                let code = match normalize_code(choice).as_str() {
                    "[undervote]" => MarkCode::UNDERVOTE,
                    "[overvote]" => MarkCode::OVERVOTE,
                    "[writein]" => MarkCode::WRITEIN,
                    name => MarkCode::candidate(contests[c].choice_index(name).ok_or_else(|| {
                        Error::InvalidParams(format!("`{choice}` is not a choice in `{contest}`"))
                    })?),
                };
                order.push((code, n));
            }
            order.sort_by_key(|(code, _)| (!code.is_candidate(), code.0));
            let mut b = 0;
            for (code, n) in order {
                for _ in 0..n {
                    rows[b][c] = code;
                    b += 1;
                }
            }
        }
        drafts.extend(rows.into_iter().map(|row| Draft { qi: qi.clone(), row }));
    }

    let mut forced: BTreeMap<(String, usize), MarkCode> = BTreeMap::new();
    for plant in &spec.planted {
        let c = contests
            .iter()
            .position(|x| x.id == normalize_code(&plant.contest))
            .ok_or_else(|| Error::UnknownContest(plant.contest.clone()))?;
        let idx = contests[c].choice_index(&normalize_code(&plant.choice)).ok_or_else(|| {
            Error::InvalidParams(format!("`{}` is not a choice in `{}`", plant.choice, plant.contest))
        })?;
        let unit = plant
            .unit
            .split('|')
            .map(normalize_code)
            .collect::<Vec<_>>()
            .join("|");
        let code = MarkCode::candidate(idx);
        if let Some(prev) = forced.insert((unit.clone(), c), code) {
            if prev != code {
                return Err(Error::ContradictoryPlant {
                    unit,
                    contest: contests[c].id.clone(),
                });
            }
        }
    }
    if !forced.is_empty() {
        let mut hit: BTreeSet<(String, usize)> = BTreeSet::new();
        for d in drafts.iter_mut() {
            let key = format!("{}|{}|{}", d.qi.precinct, d.qi.ballot_style, d.qi.vote_method.label());
            for (c, slot) in d.row.iter_mut().enumerate() {
                if let Some(code) = forced.get(&(key.clone(), c)) {
                    if slot.is_present() {
                        *slot = *code;
                        hit.insert((key.clone(), c));
                    }
                }
            }
        }
        if let Some(((unit, c), _)) = forced.iter().find(|(k, _)| !hit.contains(*k)) {
            return Err(Error::InvalidParams(format!(
                "planted unit `{unit}` has no ballots carrying `{}`",
                contests[*c].id
            )));
        }
    }

    let mut certified: BTreeMap<String, BTreeMap<String, u64>> = contests
        .iter()
        .map(|c| (c.id.clone(), c.choices.iter().map(|x| (x.clone(), 0)).collect()))
        .collect();
    for d in &drafts {
        for (c, code) in d.row.iter().enumerate() {
            if let Some(i) = code.candidate_index() {
                *certified
                    .get_mut(&contests[c].id)
                    .unwrap()
                    .get_mut(&contests[c].choices[i])
                    .unwrap() += 1;
            }
        }
    }

    let truth = if spec.truth.enabled {
        ground_truth(&drafts, &contests, &spec.truth)
    } else {
        Vec::new()
    };

    let mut roster: Vec<VotedRecord> = drafts
        .iter()
        .enumerate()
        .map(|(i, d)| VotedRecord {
            voter_id: format!("v{:07}", i + 1),
            name: Some(format!("Voter {}", i + 1)),
            address: Some(format!("{} Synthetic Way", i + 1)),
            precinct: d.qi.precinct.clone(),
            ballot_style: Some(d.qi.ballot_style.clone()),
            vote_method: match d.qi.vote_method {
                VoteMethod::Mail => CoarseMethod::Mail,
                VoteMethod::Provisional => CoarseMethod::Provisional,
                _ => CoarseMethod::InPerson,
            },
        })
        .collect();
    roster.shuffle(&mut master);

    let mut builder = Election::builder(contests)?;
    for (i, d) in drafts.iter().enumerate() {
        builder.push_coded(&format!("b{:07}", i + 1), &d.qi, &d.row)?;
    }
    Ok(SynthOutput {
        election: builder.finish(),
        roster,
        truth,
        certified: CertifiedTotals { totals: certified },
    })
}

/// Pairwise comparison within every unit, straight from the definitions.
fn ground_truth(drafts: &[Draft], contests: &[ContestSpec], spec: &TruthSpec) -> Vec<TruthSet> {
    let eligible_contest = |c: usize| contests[c].choices.len() >= 2 && contests[c].vote_for == 1;
    let eligible_mark = |m: MarkCode| m.is_candidate() || (spec.count_all_abstain && m.is_present());
    let mut kinds = vec![RevelationKind::Public];
    kinds.extend(spec.alphas.iter().filter(|&&a| a > 0).map(|&alpha| RevelationKind::Local { alpha }));
    kinds.extend(
        spec.thresholds
            .iter()
            .map(|&t| RevelationKind::Probabilistic { threshold: Share(t) }),
    );

    let mut out = Vec::new();
    for g in &spec.granularities {
        let dims = g.dims();
        let mut groups: HashMap<Vec<&str>, Vec<u32>> = HashMap::new();
        for (i, d) in drafts.iter().enumerate() {
            let key = dims
                .iter()
                .map(|dim| match dim {
                    Dimension::Precinct => d.qi.precinct.as_str(),
                    Dimension::Style => d.qi.ballot_style.as_str(),
                    Dimension::Method => d.qi.vote_method.label(),
                })
                .collect();
            groups.entry(key).or_default().push(i as u32);
        }
        let mut sets: Vec<BTreeSet<(u32, u16, MarkCode)>> = vec![BTreeSet::new(); kinds.len()];
        for members in groups.values() {
            for c in (0..contests.len()).filter(|&c| eligible_contest(c)) {
                for &b in members {
                    let mine = drafts[b as usize].row[c];
                    if !mine.is_present() || !eligible_mark(mine) {
                        continue;
                    }
                    let (mut with, mut differ) = (0u32, 0u32);
                    for &o in members {
                        let theirs = drafts[o as usize].row[c];
                        if theirs.is_present() {
                            with += 1;
                            differ += (theirs != mine) as u32;
                        }
                    }
                    for (k, kind) in kinds.iter().enumerate() {
                        let hit = match *kind {
                            RevelationKind::Public => differ == 0,
                            RevelationKind::Local { alpha } => differ >= 1 && differ <= alpha,
                            RevelationKind::Probabilistic { threshold } => {
                                (with - differ) as f64 / with as f64 >= threshold.0
                            }
                        };
                        if hit {
                            sets[k].insert((b, c as u16, mine));
                        }
                    }
                }
            }
        }
        for (kind, findings) in kinds.iter().zip(sets) {
            out.push(TruthSet {
                granularity: g.clone(),
                kind: *kind,
                findings,
            });
        }
    }
    out
}

/// Files written by [`emit`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EmittedFiles {
    pub cvr: PathBuf,
    pub format: PathBuf,
    pub roster: PathBuf,
    pub certified: PathBuf,
    pub truth: Option<PathBuf>,
}

/// Write the election, its format descriptor, roster, certified totals and
/// ground truth into `dir`.
pub fn emit(output: &SynthOutput, dir: &Path, layout: Layout) -> Result<EmittedFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = match layout {
        Layout::Jsonl => "jsonl",
        Layout::Long | Layout::Wide => "csv",
    };
    let desc = FormatDescriptor::new(layout).with_contests(output.election.contests().to_vec());
    let create = |p: &Path| fs::File::create(p).map_err(|e| Error::io(p, e));
    let files = EmittedFiles {
        cvr: dir.join(format!("cvr.{ext}")),
        format: dir.join("format.toml"),
        roster: dir.join("voted_file.csv"),
        certified: dir.join("certified.toml"),
        truth: (!output.truth.is_empty()).then(|| dir.join("ground_truth.csv")),
    };
    write_cvr(&output.election, &desc, std::io::BufWriter::new(create(&files.cvr)?))?;
    fs::write(&files.format, desc.to_toml_string()).map_err(|e| Error::io(&files.format, e))?;
    write_voted_file(&output.roster, std::io::BufWriter::new(create(&files.roster)?))?;
    fs::write(&files.certified, output.certified.to_toml_string())
        .map_err(|e| Error::io(&files.certified, e))?;
    if let Some(path) = &files.truth {
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(create(path)?));
        w.write_record(["granularity", "kind", "ballot_id", "contest_id", "revealed_choice"])?;
        let e = &output.election;
        for set in &output.truth {
            for &(b, c, code) in &set.findings {
                let choice = e
                    .decode_mark(c as usize, code)
                    .map(|m| m.to_string())
                    .unwrap_or_default();
                w.write_record([
                    set.granularity.to_string(),
                    set.kind.to_string(),
                    e.ballot_id(b as usize).to_string(),
                    e.contest(c as usize).id.clone(),
                    choice,
                ])?;
            }
        }
        w.flush().map_err(|err| Error::io(path, err))?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvass::validate_against_canvass;

    #[test]
    fn worked_example_truth() {
        let out = generate(&SynthSpec::worked_example()).unwrap();
        assert_eq!(out.election.n_ballots(), 30);
        let public = out
            .truth_for(&Granularity::BallotEquivalent, RevelationKind::Public)
            .unwrap();
        assert_eq!(public.findings.len(), 10);
        assert!(public.findings.iter().all(|&(b, c, _)| {
            c == 0 && *out.election.vote_method(b as usize) == VoteMethod::InPerson
        }));
        let local = out
            .truth_for(&Granularity::BallotEquivalent, RevelationKind::Local { alpha: 1 })
            .unwrap();
        assert_eq!(local.findings.len(), 19);
        assert!(local.findings.iter().all(|&(b, c, _)| {
            c == 0 && *out.election.vote_method(b as usize) == VoteMethod::Mail
        }));
    }

    #[test]
    fn empty_spec_gives_empty_output() {
        let out = generate(&SynthSpec::default()).unwrap();
        assert!(out.election.is_empty());
        assert!(out.roster.is_empty());
        assert!(out.truth.iter().all(|t| t.findings.is_empty()));
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec::random(11, 40, 1, 30, 4);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert!(a.election.records().eq(b.election.records()));
        assert_eq!(a.roster, b.roster);
        let c = generate(&SynthSpec { seed: 12, ..spec }).unwrap();
        assert!(!a.election.records().eq(c.election.records()));
    }

    #[test]
    fn certified_totals_are_consistent() {
        let out = generate(&SynthSpec::random(3, 30, 1, 20, 5)).unwrap();
        assert!(validate_against_canvass(&out.election, &out.certified).pass);
    }

    #[test]
    fn contradictory_plants_rejected() {
        let mut spec = SynthSpec::worked_example();
        spec.planted = vec![
            Plant {
                unit: "a|x|mail".into(),
                contest: "president".into(),
                choice: "trump".into(),
            },
            Plant {
                unit: "a|x|mail".into(),
                contest: "president".into(),
                choice: "biden".into(),
            },
        ];
        assert!(matches!(generate(&spec), Err(Error::ContradictoryPlant { .. })));
    }

    #[test]
    fn plant_forces_unanimity() {
        let mut spec = SynthSpec::worked_example();
        spec.planted = vec![Plant {
            unit: "a|x|mail".into(),
            contest: "referendum".into(),
            choice: "no".into(),
        }];
        let out = generate(&spec).unwrap();
        let public = out
            .truth_for(&Granularity::BallotEquivalent, RevelationKind::Public)
            .unwrap();
        assert_eq!(public.findings.len(), 30);
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = SynthSpec::random(5, 3, 1, 4, 2);
        let back = SynthSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(back, spec);
    }
}
