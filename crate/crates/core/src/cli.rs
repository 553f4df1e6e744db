//! Command-line orchestration: run configuration, subcommands and report bundles.
//!
//! Every subcommand writes delimited reports into the output directory plus a
//! `manifest.json` echoing the effective configuration with checksums of all
//! inputs and outputs. Reports begin with `# key: value` header lines.
//!
//! Exit codes: 0 success, 2 input or validation failure, 3 configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ballot::Election;
use crate::canvass::{validate_against_canvass, CertifiedTotals};
use crate::error::{Error, Result};
use crate::geo::{agreement_curve, Centroids, Denominator, Metric};
use crate::ingest::{ingest_cvr, FormatDescriptor, IngestReport, Layout};
use crate::model::{public_maximizer, sweep, tipping_point, Scenario};
use crate::policy::{
    apply_coarsening, apply_noising, dp_feasibility_check, tradeoff_curve, Mechanism, NoisingSpec,
    PolicyFile, RedactionAction, RedactionSweep,
};
use crate::revelation::{
    any_contest_summary, contest_stats, decompose_by, ContestExclusions, Decomposition, RevelationEngine,
    RevelationFinding, RevelationOptions, StyleClassifier, SummaryRow,
};
use crate::synth::{emit, generate, SynthSpec};
use crate::units::{build_reporting_units, unit_size_ecdf, Granularity, Units};
use crate::voterfile::{link_voted_file, load_voted_file};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AbstainMode {
    /// Only candidate marks can be revealed.
    #[default]
    CandidateOnly,
    /// Unanimous undervotes, overvotes and write-ins reveal too.
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub cvr: Option<PathBuf>,
    pub format: Option<PathBuf>,
    pub voted_file: Option<PathBuf>,
    pub certified: Option<PathBuf>,
    pub centroids: Option<PathBuf>,
    /// Ballot styles carrying only federal contests; inferred when absent.
    pub federal_only_styles: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub granularities: Vec<Granularity>,
    pub alphas: Vec<u32>,
    pub thresholds: Vec<f64>,
    pub abstain_mode: AbstainMode,
    pub contested_only: bool,
    /// Style types left out of the per-contest table (`federal_only`).
    pub exclude_style_types: Vec<String>,
    /// Contests left out of the per-contest table.
    pub exclude_contests: Vec<String>,
    pub ecdf_thresholds: Vec<usize>,
    /// Contest whose choices split the revealed voters; first federal contest by default.
    pub choice_contest: Option<String>,
    /// Write the finding-level export for each granularity.
    pub write_findings: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            granularities: vec![
                Granularity::Precinct,
                Granularity::PrecinctMethod,
                Granularity::BallotEquivalent,
            ],
            alphas: vec![1, 2],
            thresholds: vec![0.95],
            abstain_mode: AbstainMode::CandidateOnly,
            contested_only: true,
            exclude_style_types: vec!["federal_only".into()],
            exclude_contests: Vec::new(),
            ecdf_thresholds: vec![1, 2, 5, 10, 20, 30, 50, 100],
            choice_contest: None,
            write_findings: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub files: Vec<PathBuf>,
    pub granularity: Granularity,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            files: Vec::new(),
            granularity: Granularity::BallotEquivalent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scenarios: Vec<Scenario>,
    pub n_max: u64,
    pub alphas: Vec<u64>,
    pub draws: u64,
    pub tipping_thresholds: Vec<f64>,
    pub tipping_bound: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let sc = |name: &str, w: &[f64], s: f64| Scenario {
            name: name.into(),
            w: w.to_vec(),
            s,
        };
        ModelConfig {
            scenarios: vec![
                sc("default", &[0.7, 0.3], 0.0),
                sc("conducive", &[0.95, 0.05], 0.05),
                sc("resistant", &[0.25, 0.25, 0.25, 0.25], 0.2),
            ],
            n_max: 100,
            alphas: vec![0, 1, 2],
            draws: 20_000,
            tipping_thresholds: vec![0.01, 0.001],
            tipping_bound: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    pub contest: Option<String>,
    pub radii: Vec<f64>,
    pub metric: Metric,
    pub denominator: Denominator,
    pub granularities: Vec<Granularity>,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig {
            contest: None,
            radii: vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0],
            metric: Metric::Haversine,
            denominator: Denominator::CandidateVotes,
            granularities: vec![Granularity::Precinct, Granularity::BallotEquivalent],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: Option<PathBuf>,
    /// `worked_example`, or `random` for a random spec of `precincts` precincts.
    pub example: Option<String>,
    pub precincts: usize,
    pub contests: usize,
    pub layout: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            spec: None,
            example: None,
            precincts: 200,
            contests: 10,
            layout: "wide".into(),
        }
    }
}

/// Everything one run needs; flags override fields after loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub input: InputConfig,
    pub analysis: AnalysisConfig,
    pub policy: PolicyConfig,
    pub model: ModelConfig,
    pub geo: GeoConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("voterev-out"),
            input: InputConfig::default(),
            analysis: AnalysisConfig::default(),
            policy: PolicyConfig::default(),
            model: ModelConfig::default(),
            geo: GeoConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse TOML; relative paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text)?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.input.cvr,
            &mut cfg.input.format,
            &mut cfg.input.voted_file,
            &mut cfg.input.certified,
            &mut cfg.input.centroids,
            &mut cfg.synth.spec,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        cfg.policy.files.iter_mut().for_each(fix);
        fix(&mut cfg.out);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn revelation_options(&self) -> RevelationOptions {
        RevelationOptions {
            contested_only: self.analysis.contested_only,
            count_all_abstain: self.analysis.abstain_mode == AbstainMode::All,
            excluded_contests: Default::default(),
        }
    }

    fn exclusions(&self) -> ContestExclusions {
        ContestExclusions {
            federal_only_ballots: self
                .analysis
                .exclude_style_types
                .iter()
                .any(|s| s.trim().eq_ignore_ascii_case("federal_only")),
            contests: self
                .analysis
                .exclude_contests
                .iter()
                .map(|c| crate::ballot::normalize_code(c))
                .collect(),
        }
    }

    fn check(&self) -> Result<()> {
        for t in &self.analysis.thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::Config(format!("threshold {t} outside (0, 1]")));
            }
        }
        for s in &self.analysis.exclude_style_types {
            if !matches!(s.trim().to_lowercase().as_str(), "federal_only" | "full") {
                return Err(Error::Config(format!("unknown style type `{s}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "voterev", version, about = "Measure vote revelation in election results")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Reporting-unit granularities, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub granularity: Vec<Granularity>,
    /// Coalition sizes, comma separated; `none` for no local revelation
    #[arg(long, global = true, value_delimiter = ',')]
    pub alpha: Vec<String>,
    /// Probabilistic revelation thresholds, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub threshold: Vec<f64>,
    #[arg(long, global = true, value_enum)]
    pub abstain_mode: Option<AbstainMode>,
    /// Ballot style type left out of per-contest rates (`federal_only`)
    #[arg(long, global = true)]
    pub exclude_style_type: Vec<String>,
    /// Contest left out of per-contest rates (repeatable)
    #[arg(long, global = true)]
    pub exclude_contest: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Revelation tables, unit-size distribution and finding export
    Analyze(InputArgs),
    /// Redaction tradeoff, coarsening and noising reports
    Policy {
        #[command(flatten)]
        input: InputArgs,
        /// Policy file (TOML, repeatable)
        #[arg(long)]
        policy: Vec<PathBuf>,
    },
    /// Expected-revelation sweeps and tipping points
    Model,
    /// Agreement between revealed votes and their neighbours
    Geo {
        #[command(flatten)]
        input: InputArgs,
        /// Precinct centroids (precinct,lat,lon)
        #[arg(long)]
        centroids: Option<PathBuf>,
        #[arg(long)]
        contest: Option<String>,
    },
    /// Generate a synthetic election with ground truth
    Synth {
        /// Synthetic election spec (TOML)
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Built-in spec: `worked_example` or `random`
        #[arg(long)]
        example: Option<String>,
        /// CVR layout: long, wide or jsonl
        #[arg(long)]
        layout: Option<String>,
    },
    /// Compare CVR tallies with certified totals
    Validate {
        #[command(flatten)]
        input: InputArgs,
        /// Certified totals (TOML)
        #[arg(long)]
        certified: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Args)]
pub struct InputArgs {
    /// Cast vote records
    #[arg(long)]
    pub cvr: Option<PathBuf>,
    /// Format descriptor (TOML)
    #[arg(long)]
    pub format: Option<PathBuf>,
    /// Voted file
    #[arg(long)]
    pub voted_file: Option<PathBuf>,
}

/// Merge the config file and flags into the effective configuration.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if !g.granularity.is_empty() {
        cfg.analysis.granularities = g.granularity.clone();
    }
    if !g.alpha.is_empty() {
        cfg.analysis.alphas = if g.alpha.iter().any(|a| a.trim().eq_ignore_ascii_case("none")) {
            Vec::new()
        } else {
            g.alpha
                .iter()
                .map(|a| {
                    a.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad alpha `{a}`")))
                })
                .collect::<Result<_>>()?
        };
    }
    if !g.threshold.is_empty() {
        cfg.analysis.thresholds = g.threshold.clone();
    }
    if let Some(m) = g.abstain_mode {
        cfg.analysis.abstain_mode = m;
    }
    if !g.exclude_style_type.is_empty() {
        cfg.analysis.exclude_style_types = g.exclude_style_type.clone();
    }
    if !g.exclude_contest.is_empty() {
        cfg.analysis.exclude_contests = g.exclude_contest.clone();
    }
    let input = match &cli.command {
        Command::Analyze(i) => Some(i),
        Command::Policy { input, policy } => {
            if !policy.is_empty() {
                cfg.policy.files = policy.clone();
            }
            Some(input)
        }
        Command::Geo {
            input,
            centroids,
            contest,
        } => {
            if centroids.is_some() {
                cfg.input.centroids = centroids.clone();
            }
            if contest.is_some() {
                cfg.geo.contest = contest.clone();
            }
            Some(input)
        }
        Command::Validate { input, certified } => {
            if certified.is_some() {
                cfg.input.certified = certified.clone();
            }
            Some(input)
        }
        Command::Synth { spec, example, layout } => {
            if spec.is_some() {
                cfg.synth.spec = spec.clone();
            }
            if example.is_some() {
                cfg.synth.example = example.clone();
            }
            if let Some(l) = layout {
                cfg.synth.layout = l.clone();
            }
            None
        }
        Command::Model => None,
    };
    if let Some(i) = input {
        if i.cvr.is_some() {
            cfg.input.cvr = i.cvr.clone();
        }
        if i.format.is_some() {
            cfg.input.format = i.format.clone();
        }
        if i.voted_file.is_some() {
            cfg.input.voted_file = i.voted_file.clone();
        }
    }
    cfg.check()?;
    Ok(cfg)
}

/// Collects written files and input checksums for the manifest.
pub struct Bundle {
    dir: PathBuf,
    command: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub inputs: &'a [FileDigest],
    pub outputs: &'a [FileDigest],
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Bundle {
    pub fn new(dir: &Path, command: &str) -> Result<Bundle> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Bundle {
            dir: dir.to_path_buf(),
            command: command.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            sha256: digest(&bytes),
        });
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.push(FileDigest {
            path: name.into(),
            bytes: bytes.len() as u64,
            sha256: digest(bytes),
        });
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(name, bytes);
        Ok(())
    }

    /// A delimited report with `# key: value` header lines.
    pub fn report(&mut self, name: &str, meta: &[(&str, String)], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut buf = Vec::new();
        for (k, v) in meta {
            writeln!(buf, "# {k}: {v}").expect("write to vec");
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush().expect("write to vec");
        }
        self.write(name, &buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    /// Register a file written by someone else.
    pub fn adopt(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .strip_prefix(&self.dir)
            .unwrap_or(path)
            .display()
            .to_string();
        self.record(&name, &bytes);
        Ok(())
    }

    pub fn finish(mut self, config: &RunConfig) -> Result<PathBuf> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            tool: "voterev",
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn pct(num: usize, den: usize) -> String {
    if den == 0 {
        "0.0000".into()
    } else {
        format!("{:.4}", 100.0 * num as f64 / den as f64)
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

/// Ingest the configured CVR and register its inputs.
pub fn load_election(cfg: &RunConfig, bundle: &mut Bundle) -> Result<(Election, IngestReport)> {
    let cvr = cfg
        .input
        .cvr
        .as_ref()
        .ok_or_else(|| Error::Config("no CVR input given (--cvr or [input] cvr)".into()))?;
    let desc = match &cfg.input.format {
        Some(p) => {
            bundle.input(p)?;
            FormatDescriptor::load(p)?
        }
        None => {
            let jsonl = cvr.extension().is_some_and(|e| e == "jsonl");
            FormatDescriptor::new(if jsonl { Layout::Jsonl } else { Layout::Long })
        }
    };
    bundle.input(cvr)?;
    ingest_cvr(cvr, &desc)
}

fn classifier(cfg: &RunConfig, election: &Election) -> StyleClassifier {
    match &cfg.input.federal_only_styles {
        Some(list) => StyleClassifier {
            federal_only: list.iter().map(|s| crate::ballot::normalize_code(s)).collect(),
        },
        None => StyleClassifier::infer(election),
    }
}

fn check_inputs(cfg: &RunConfig, needs: &[(&str, &Option<PathBuf>)]) -> Result<()> {
    for (what, p) in needs {
        match p {
            None => return Err(Error::Config(format!("missing input: {what}"))),
            Some(p) if !p.exists() => {
                return Err(Error::Config(format!("{what} `{}` does not exist", p.display())))
            }
            _ => {}
        }
    }
    for p in [&cfg.input.format, &cfg.input.voted_file].into_iter().flatten() {
        if !p.exists() {
            return Err(Error::Config(format!("input `{}` does not exist", p.display())));
        }
    }
    Ok(())
}

fn meta_for(cfg: &RunConfig, report: &str, granularity: &str) -> Vec<(&'static str, String)> {
    let ex = cfg.exclusions();
    let mut excl: Vec<String> = Vec::new();
    if ex.federal_only_ballots {
        excl.push("federal_only ballots".into());
    }
    excl.extend(ex.contests.iter().map(|c| format!("contest {c}")));
    vec![
        ("report", report.to_string()),
        ("granularity", granularity.to_string()),
        (
            "abstain_mode",
            match cfg.analysis.abstain_mode {
                AbstainMode::CandidateOnly => "candidate_only".into(),
                AbstainMode::All => "all".into(),
            },
        ),
        ("contested_only", cfg.analysis.contested_only.to_string()),
        (
            "exclusions",
            if excl.is_empty() { "none".into() } else { excl.join("; ") },
        ),
    ]
}

struct GranularityRun {
    granularity: Granularity,
    units: Units,
    findings: Vec<RevelationFinding>,
    public: Vec<RevelationFinding>,
    exposed: Vec<(f64, usize)>,
}

fn run_granularity(election: &Election, cfg: &RunConfig, g: &Granularity) -> Result<GranularityRun> {
    let units = build_reporting_units(election, g);
    let engine = RevelationEngine::new(election, &units, cfg.revelation_options());
    let public = engine.public();
    let mut findings = public.clone();
    for &a in &cfg.analysis.alphas {
        findings.extend(engine.local(a));
    }
    let mut exposed = Vec::new();
    for &p in &cfg.analysis.thresholds {
        findings.extend(engine.probabilistic(p)?);
        exposed.push((p, engine.probabilistic_exposed(p)?.len()));
    }
    drop(engine);
    Ok(GranularityRun {
        granularity: g.clone(),
        units,
        findings,
        public,
        exposed,
    })
}

/// Revelation tables for every configured granularity.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<PathBuf> {
    check_inputs(cfg, &[("cvr", &cfg.input.cvr)])?;
    if cfg.analysis.granularities.is_empty() {
        return Err(Error::Config("no granularities requested".into()));
    }
    let mut bundle = Bundle::new(&cfg.out, "analyze")?;
    let (election, ingest) = load_election(cfg, &mut bundle)?;
    bundle.json("ingest_report.json", &ingest)?;
    if election.is_empty() {
        return Err(Error::Empty("the CVR holds no ballots".into()));
    }
    let classifier = classifier(cfg, &election);
    let exclusions = cfg.exclusions();
    let n = election.n_ballots();
    let choice_contest = cfg.analysis.choice_contest.clone().or_else(|| {
        election
            .contests()
            .iter()
            .find(|c| c.federal && c.contested())
            .map(|c| c.id.clone())
    });

    let mut table1 = Vec::new();
    let mut table2 = Vec::new();
    let mut table3 = Vec::new();
    let mut table5 = Vec::new();
    let mut contests = Vec::new();
    let gran_list: Vec<String> = cfg.analysis.granularities.iter().map(|g| g.to_string()).collect();
    for g in &cfg.analysis.granularities {
        let run = run_granularity(&election, cfg, g)?;
        let gs = run.granularity.to_string();
        let summary = any_contest_summary(g, &run.findings, n)?;
        let row = |r: &SummaryRow| {
            vec![
                gs.clone(),
                r.kind.clone(),
                r.voters.to_string(),
                r.increment_over_public.map(|x| x.to_string()).unwrap_or_default(),
                r.total_voters.to_string(),
                pct(r.voters, r.total_voters),
            ]
        };
        table1.extend(summary.rows.iter().map(row));
        for (p, count) in &run.exposed {
            table1.push(vec![
                gs.clone(),
                format!("probabilistic_exposed:{p}"),
                count.to_string(),
                String::new(),
                n.to_string(),
                pct(*count, n),
            ]);
        }

        for (label, dim) in [
            ("vote_method", Decomposition::VoteMethod),
            ("ballot_style_type", Decomposition::BallotStyleType),
            ("provisional_or_federal_only", Decomposition::ProvisionalOrFederalOnly),
        ] {
            for r in decompose_by(&run.public, &election, &dim, Some(&classifier), &exclusions)? {
                table2.push(vec![
                    gs.clone(),
                    label.into(),
                    r.group,
                    r.revealed.to_string(),
                    r.voters.to_string(),
                    pct(r.revealed, r.voters),
                ]);
            }
        }
        if let Some(c) = &choice_contest {
            let dim = Decomposition::ChoiceIn(c.clone());
            for r in decompose_by(&run.public, &election, &dim, Some(&classifier), &exclusions)? {
                table3.push(vec![
                    gs.clone(),
                    c.clone(),
                    r.group,
                    r.revealed.to_string(),
                    r.voters.to_string(),
                    pct(r.revealed, r.voters),
                ]);
            }
        }
        for r in decompose_by(&run.public, &election, &Decomposition::Contest, Some(&classifier), &exclusions)? {
            contests.push(vec![
                gs.clone(),
                r.group,
                r.revealed.to_string(),
                r.voters.to_string(),
                f6(r.rate),
            ]);
        }
        for e in unit_size_ecdf(&run.units, &cfg.analysis.ecdf_thresholds)? {
            table5.push(vec![
                gs.clone(),
                run.units.len().to_string(),
                e.threshold.to_string(),
                e.voters_in_small_units.to_string(),
                e.total_voters.to_string(),
                e.rounded().to_string(),
            ]);
        }
        if cfg.analysis.write_findings {
            let mut buf = Vec::new();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                w.write_record(["ballot_id", "contest_id", "kind", "revealed_choice", "unit_key", "unit_size"])?;
                for f in &run.findings {
                    let r = f.resolve(&election, &run.units);
                    w.write_record([
                        r.ballot_id,
                        r.contest_id,
                        r.kind,
                        r.revealed_choice,
                        r.unit_key,
                        r.unit_size.to_string(),
                    ])?;
                }
                w.flush().expect("write to vec");
            }
            bundle.write(&format!("findings_{}.csv", file_tag(g)), &buf)?;
        }
        if let Some(vf) = &cfg.input.voted_file {
            let voted = load_voted_file(vf)?;
            let link = link_voted_file(&election, g, &voted, None);
            bundle.json(&format!("linkage_{}.json", file_tag(g)), &link)?;
        }
    }
    if let Some(vf) = &cfg.input.voted_file {
        bundle.input(vf)?;
    }
    let all = gran_list.join(",");
    bundle.report(
        "revelation_counts.csv",
        &meta_for(cfg, "voters with at least one revealed vote", &all),
        &["granularity", "kind", "voters", "increment_over_public", "total_voters", "percent"],
        &table1,
    )?;
    bundle.report(
        "revelation_by_method_style.csv",
        &meta_for(cfg, "public revelation by vote method and ballot style type", &all),
        &["granularity", "dimension", "group", "revealed", "voters", "percent"],
        &table2,
    )?;
    bundle.report(
        "revelation_by_choice.csv",
        &meta_for(cfg, "public revelation by choice", &all),
        &["granularity", "contest", "choice", "revealed", "voters", "percent"],
        &table3,
    )?;
    bundle.report(
        "revelation_by_contest.csv",
        &meta_for(cfg, "share of each contest's ballots publicly revealed", &all),
        &["granularity", "contest", "revealed", "ballots", "rate"],
        &contests,
    )?;
    bundle.report(
        "unit_sizes.csv",
        &meta_for(cfg, "voters per 100,000 in units of at most `threshold` ballots", &all),
        &["granularity", "unique_units", "threshold", "voters_in_small_units", "total_voters", "per_100k"],
        &table5,
    )?;
    let stats: Vec<Vec<String>> = contest_stats(&election)
        .into_iter()
        .map(|s| {
            vec![
                s.contest,
                s.ballots.to_string(),
                s.undervotes.to_string(),
                s.overvotes.to_string(),
                s.writeins.to_string(),
                s.candidate_votes.to_string(),
                f6(s.undervote_rate),
                s.lopsidedness.map(f6).unwrap_or_default(),
                s.two_choice.to_string(),
            ]
        })
        .collect();
    bundle.report(
        "contest_stats.csv",
        &[("report", "undervoting and lopsidedness by contest".into())],
        &[
            "contest",
            "ballots",
            "undervotes",
            "overvotes",
            "writeins",
            "candidate_votes",
            "undervote_rate",
            "lopsidedness",
            "two_choice",
        ],
        &stats,
    )?;
    if let Some(cert) = &cfg.input.certified {
        bundle.input(cert)?;
        let report = validate_against_canvass(&election, &CertifiedTotals::load(cert)?);
        bundle.json("validation.json", &report)?;
    }
    bundle.finish(cfg)
}

fn file_tag(g: &Granularity) -> String {
    g.to_string().replace([':', '+'], "_")
}

/// Redaction tradeoff, coarsening and noising for the configured policies.
pub fn cmd_policy(cfg: &RunConfig) -> Result<PathBuf> {
    check_inputs(cfg, &[("cvr", &cfg.input.cvr)])?;
    let mut policies = Vec::new();
    for p in &cfg.policy.files {
        if !p.exists() {
            return Err(Error::Config(format!("policy file `{}` does not exist", p.display())));
        }
        policies.push((p.clone(), PolicyFile::load(p)?));
    }
    let mut bundle = Bundle::new(&cfg.out, "policy")?;
    for (p, _) in &policies {
        bundle.input(p)?;
    }
    if policies.is_empty() {
        policies.push((PathBuf::from("<default>"), default_policy()));
    }
    let (election, _) = load_election(cfg, &mut bundle)?;
    let g = &cfg.policy.granularity;
    let opts = cfg.revelation_options();
    let classifier = classifier(cfg, &election);

    let mut curve = Vec::new();
    let mut coarse = Vec::new();
    let mut fidelity = Vec::new();
    let mut noised = Vec::new();
    let mut dp = Vec::new();
    for (path, policy) in &policies {
        let name = path.display().to_string();
        if let Some(RedactionSweep { k, action }) = &policy.redaction {
            for o in tradeoff_curve(&election, g, k, *action, &opts)? {
                curve.push(vec![
                    name.clone(),
                    o.k.to_string(),
                    o.action.label().into(),
                    o.revelations_before.to_string(),
                    o.revelations_after.to_string(),
                    o.ballots_redacted_vulnerable.to_string(),
                    o.ballots_redacted_not_vulnerable.to_string(),
                    o.residual_public_after.to_string(),
                    o.published_units.to_string(),
                    o.total_ballots.to_string(),
                ]);
            }
        }
        let result = apply_coarsening(&election, &policy.coarsening, g, &classifier, &opts)?;
        for (stage, summary) in [("before", &result.before), ("after", &result.after)] {
            for r in &summary.rows {
                coarse.push(vec![
                    name.clone(),
                    stage.into(),
                    r.kind.clone(),
                    r.voters.to_string(),
                    r.total_voters.to_string(),
                    pct(r.voters, r.total_voters),
                    result.rewritten.to_string(),
                ]);
            }
        }
        if let Some(ns) = &policy.noising {
            let units = build_reporting_units(&election, g);
            let engine = RevelationEngine::new(&election, &units, opts.clone());
            let out = apply_noising(
                engine.tallies(),
                &NoisingSpec {
                    magnitude: ns.magnitude,
                    epsilon: None,
                },
                cfg.seed,
            );
            fidelity.push(vec![
                name.clone(),
                ns.magnitude.to_string(),
                out.fidelity.unit_contests.to_string(),
                out.fidelity.flips.len().to_string(),
            ]);
            for c in out.counts {
                noised.push(vec![
                    name.clone(),
                    c.unit_key,
                    c.contest,
                    c.choice,
                    c.true_count.to_string(),
                    c.noised_count.to_string(),
                ]);
            }
        }
        if let Some(check) = &policy.dp {
            let mechanisms = [
                Mechanism::Noiseless,
                Mechanism::Constant,
                Mechanism::UniformNoise {
                    magnitude: check.noise_magnitude.max(1),
                },
            ];
            for &m in &check.margins {
                for mech in mechanisms {
                    let v = dp_feasibility_check(mech, m, check.epsilon)?;
                    dp.push(vec![
                        name.clone(),
                        mechanism_label(v.mechanism),
                        m.to_string(),
                        check.epsilon.to_string(),
                        v.log_ratio.map(f6).unwrap_or_else(|| "inf".into()),
                        v.feasible.to_string(),
                    ]);
                }
            }
        }
    }
    let gs = g.to_string();
    let meta = |r: &str| meta_for(cfg, r, &gs);
    bundle.report(
        "redaction_tradeoff.csv",
        &meta("ballots affected by redacting units with k or fewer ballots"),
        &[
            "policy",
            "k",
            "action",
            "revelations_before",
            "revelations_after",
            "affected_vulnerable",
            "affected_not_vulnerable",
            "residual_public_after",
            "published_units",
            "total_ballots",
        ],
        &curve,
    )?;
    bundle.report(
        "coarsening.csv",
        &meta("revelation before and after quasi-identifier coarsening"),
        &["policy", "stage", "kind", "voters", "total_voters", "percent", "ballots_rewritten"],
        &coarse,
    )?;
    let mut noise_meta = meta("leader changes under bounded uniform noise");
    noise_meta.push(("seed", cfg.seed.to_string()));
    bundle.report(
        "noising_fidelity.csv",
        &noise_meta,
        &["policy", "magnitude", "unit_contests", "leader_flips"],
        &fidelity,
    )?;
    bundle.report(
        "noised_counts.csv",
        &noise_meta,
        &["policy", "unit_key", "contest", "choice", "true_count", "noised_count"],
        &noised,
    )?;
    bundle.report(
        "dp_check.csv",
        &[("report", "differential privacy of winner reporting, one leader ballot removed".into())],
        &["policy", "mechanism", "margin", "epsilon", "log_ratio", "feasible"],
        &dp,
    )?;
    bundle.finish(cfg)
}

fn mechanism_label(m: Mechanism) -> String {
    match m {
        Mechanism::Noiseless => "noiseless".into(),
        Mechanism::Constant => "constant".into(),
        Mechanism::UniformNoise { magnitude } => format!("uniform_noise:{magnitude}"),
    }
}

fn default_policy() -> PolicyFile {
    PolicyFile {
        redaction: Some(RedactionSweep {
            k: (0..=40).collect(),
            action: RedactionAction::MergeIntoParentUnit,
        }),
        coarsening: vec![crate::policy::CoarseningRule::provisional_to_in_person()],
        noising: Some(crate::policy::NoisingSweep { magnitude: 2 }),
        dp: Some(crate::policy::DpCheck {
            epsilon: 1.0,
            margins: vec![1, 2, 5],
            noise_magnitude: 1,
        }),
    }
}

/// Expected-revelation sweep with tipping points and maximizers.
pub fn cmd_model(cfg: &RunConfig) -> Result<PathBuf> {
    let m = &cfg.model;
    if m.scenarios.is_empty() || m.n_max == 0 {
        return Err(Error::Config("model needs a scenario and n_max >= 1".into()));
    }
    let mut bundle = Bundle::new(&cfg.out, "model")?;
    let ns: Vec<u64> = (1..=m.n_max).collect();
    let rows = sweep(&m.scenarios, &ns, &m.alphas, m.draws, cfg.seed)?;
    let mut tips = Vec::new();
    let mut meta: Vec<(&str, String)> = vec![("report", "expected revelations by unit size".into())];
    for sc in &m.scenarios {
        let (argmax, peak) = public_maximizer(&sc.w, sc.s, m.n_max)?;
        for &t in &m.tipping_thresholds {
            let tp = match tipping_point(&sc.w, sc.s, t, m.tipping_bound) {
                Ok(n) => n.to_string(),
                Err(Error::Unreachable { .. }) => "unreached".into(),
                Err(e) => return Err(e),
            };
            meta.push(("tipping_point", format!("{} below {t} from N = {tp}", sc.name)));
            tips.push(vec![
                sc.name.clone(),
                t.to_string(),
                tp,
                argmax.to_string(),
                f6(peak),
            ]);
        }
    }
    let table: Vec<Vec<String>> = rows
        .into_iter()
        .map(|r| {
            vec![
                r.scenario,
                r.n.to_string(),
                r.alpha.to_string(),
                r.method.label().into(),
                format!("{:.12}", r.expected),
                format!("{:.12}", r.std_error),
            ]
        })
        .collect();
    meta.push(("seed", cfg.seed.to_string()));
    bundle.report(
        "model_sweep.csv",
        &meta,
        &["scenario", "n", "alpha", "method", "expected", "std_error"],
        &table,
    )?;
    bundle.report(
        "tipping_points.csv",
        &[("report", "smallest N after which expected public revelation stays below the threshold".into())],
        &["scenario", "threshold", "tipping_point", "maximizer_n", "maximum"],
        &tips,
    )?;
    bundle.finish(cfg)
}

/// Agreement curves of publicly revealed votes in one contest.
pub fn cmd_geo(cfg: &RunConfig) -> Result<PathBuf> {
    check_inputs(cfg, &[("cvr", &cfg.input.cvr), ("centroids", &cfg.input.centroids)])?;
    let mut bundle = Bundle::new(&cfg.out, "geo")?;
    let (election, _) = load_election(cfg, &mut bundle)?;
    let cpath = cfg.input.centroids.as_ref().expect("checked");
    bundle.input(cpath)?;
    let centroids = Centroids::load(cpath, cfg.geo.metric)?;
    let contest = match &cfg.geo.contest {
        Some(c) => crate::ballot::normalize_code(c),
        None => election
            .contests()
            .iter()
            .find(|c| c.federal && c.contested())
            .or_else(|| election.contests().iter().find(|c| c.contested()))
            .map(|c| c.id.clone())
            .ok_or_else(|| Error::Config("no contest for agreement curves".into()))?,
    };
    let mut points = Vec::new();
    let mut means = Vec::new();
    let mut excluded = Vec::new();
    for g in &cfg.geo.granularities {
        let units = build_reporting_units(&election, g);
        let public = RevelationEngine::new(&election, &units, cfg.revelation_options()).public();
        let curve = agreement_curve(&public, &election, &units, &contest, &centroids, &cfg.geo.radii, cfg.geo.denominator)?;
        let gs = g.to_string();
        for p in curve.points {
            points.push(vec![
                gs.clone(),
                p.unit_key,
                p.precinct,
                p.radius.to_string(),
                p.revealed_choice,
                f6(p.agreement),
                p.weight.to_string(),
            ]);
        }
        for m in curve.means {
            means.push(vec![
                gs.clone(),
                m.radius.to_string(),
                m.revealed_choice,
                f6(m.agreement),
                m.weight.to_string(),
            ]);
        }
        excluded.extend(curve.excluded_units.into_iter().map(|u| vec![gs.clone(), u]));
    }
    let meta = vec![
        ("report", "agreement of revealed votes with neighbouring voters".to_string()),
        ("contest", contest.clone()),
        ("metric", format!("{:?}", cfg.geo.metric).to_lowercase()),
        ("denominator", format!("{:?}", cfg.geo.denominator).to_lowercase()),
    ];
    bundle.report(
        "agreement_means.csv",
        &meta,
        &["granularity", "radius", "candidate", "agreement", "weight"],
        &means,
    )?;
    bundle.report(
        "agreement_points.csv",
        &meta,
        &["granularity", "unit_key", "precinct", "radius", "candidate", "agreement", "weight"],
        &points,
    )?;
    bundle.report(
        "agreement_excluded.csv",
        &[("report", "revealed units without a centroid".into())],
        &["granularity", "unit_key"],
        &excluded,
    )?;
    bundle.finish(cfg)
}

/// Generate and emit a synthetic election.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let mut bundle = Bundle::new(&cfg.out, "synth")?;
    let mut spec = match (&cfg.synth.spec, cfg.synth.example.as_deref()) {
        (Some(p), _) => {
            if !p.exists() {
                return Err(Error::Config(format!("spec `{}` does not exist", p.display())));
            }
            bundle.input(p)?;
            SynthSpec::load(p)?
        }
        (None, Some("worked_example")) => SynthSpec::worked_example(),
        (None, Some("random") | None) => {
            SynthSpec::random(cfg.seed, cfg.synth.precincts, 1, 60, cfg.synth.contests)
        }
        (None, Some(other)) => return Err(Error::Config(format!("unknown example `{other}`"))),
    };
    if cfg.synth.spec.is_some() && cfg.seed != 0 {
        spec.seed = cfg.seed;
    }
    let layout = Layout::parse(&cfg.synth.layout).map_err(|e| Error::Config(e.to_string()))?;
    let out = generate(&spec)?;
    let files = emit(&out, bundle.dir(), layout)?;
    for p in [&files.cvr, &files.format, &files.roster, &files.certified]
        .into_iter()
        .chain(files.truth.as_ref())
    {
        bundle.adopt(p)?;
    }
    bundle.write("spec.toml", spec.to_toml_string().as_bytes())?;
    bundle.finish(cfg)
}

/// Exact comparison with certified totals; `Ok(false)` on mismatch.
pub fn cmd_validate(cfg: &RunConfig) -> Result<(PathBuf, bool)> {
    check_inputs(cfg, &[("cvr", &cfg.input.cvr), ("certified totals", &cfg.input.certified)])?;
    let mut bundle = Bundle::new(&cfg.out, "validate")?;
    let (election, ingest) = load_election(cfg, &mut bundle)?;
    let cert = cfg.input.certified.as_ref().expect("checked");
    bundle.input(cert)?;
    let report = validate_against_canvass(&election, &CertifiedTotals::load(cert)?);
    bundle.json("ingest_report.json", &ingest)?;
    bundle.json("validation.json", &report)?;
    let rows: Vec<Vec<String>> = report
        .discrepancies
        .iter()
        .map(|d| {
            vec![
                d.contest.clone(),
                d.choice.clone(),
                d.cvr.to_string(),
                d.certified.to_string(),
                d.difference.to_string(),
            ]
        })
        .collect();
    bundle.report(
        "discrepancies.csv",
        &[
            ("report", "CVR tally minus certified total".into()),
            ("pass", report.pass.to_string()),
        ],
        &["contest", "choice", "cvr", "certified", "difference"],
        &rows,
    )?;
    Ok((bundle.finish(cfg)?, report.pass))
}

/// Configuration problems map to 3, everything else to 2.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Toml(_) | Error::InvalidParams(_) => EXIT_CONFIG,
        _ => EXIT_VALIDATION,
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    status: &'a str,
    exit_code: i32,
    error: String,
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => return fail(&e, None),
    };
    let result = match &cli.command {
        Command::Analyze(_) => cmd_analyze(&cfg).map(|p| (p, true)),
        Command::Policy { .. } => cmd_policy(&cfg).map(|p| (p, true)),
        Command::Model => cmd_model(&cfg).map(|p| (p, true)),
        Command::Geo { .. } => cmd_geo(&cfg).map(|p| (p, true)),
        Command::Synth { .. } => cmd_synth(&cfg).map(|p| (p, true)),
        Command::Validate { .. } => cmd_validate(&cfg),
    };
    match result {
        Ok((manifest, true)) => {
            println!("{}", manifest.display());
            EXIT_OK
        }
        Ok((manifest, false)) => {
            println!("{}", manifest.display());
            eprintln!("validation failed: CVR tallies differ from certified totals");
            EXIT_VALIDATION
        }
        Err(e) => fail(&e, Some(&cfg.out)),
    }
}

fn fail(err: &Error, out: Option<&Path>) -> i32 {
    let code = exit_code(err);
    let report = ErrorReport {
        status: if code == EXIT_CONFIG { "config_error" } else { "failed" },
        exit_code: code,
        error: err.to_string(),
    };
    let text = serde_json::to_string_pretty(&report).expect("error report serializes");
    eprintln!("{text}");
    if let Some(dir) = out.filter(|d| d.is_dir()) {
        let _ = fs::write(dir.join("error.json"), format!("{text}\n"));
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "voterev",
            "--alpha",
            "none",
            "--threshold",
            "0.9,0.99",
            "--granularity",
            "precinct,ballot_equivalent",
            "model",
        ])
        .unwrap();
        let cfg = resolve_config(&cli).unwrap();
        assert!(cfg.analysis.alphas.is_empty());
        assert_eq!(cfg.analysis.thresholds, vec![0.9, 0.99]);
        assert_eq!(cfg.analysis.granularities.len(), 2);
    }

    #[test]
    fn bad_threshold_is_config_error() {
        let cli = Cli::try_parse_from(["voterev", "--threshold", "1.5", "model"]).unwrap();
        let err = resolve_config(&cli).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn config_paths_resolve_against_file() {
        let cfg = RunConfig::from_toml_str("[input]\ncvr = \"data/cvr.csv\"\n", Path::new("/tmp/run")).unwrap();
        assert_eq!(cfg.input.cvr.unwrap(), Path::new("/tmp/run/data/cvr.csv"));
    }

    #[test]
    fn unknown_config_key_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1\n", Path::new(".")).is_err());
    }
}
