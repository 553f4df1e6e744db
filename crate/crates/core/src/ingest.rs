//! Reading and writing cast vote record files.
//!
//! Three layouts are supported:
//! - `long`: one row per (ballot, contest) with a `mark_kind` column,
//! - `wide`: one row per ballot with one column per contest,
//! - `jsonl`: one JSON object per ballot.
//!
//! A [`FormatDescriptor`] (TOML) names the column roles and, optionally,
//! declares the contests. Without declared contests they are inferred in
//! order of first appearance.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ballot::{
    normalize_code, CastVoteRecord, ContestSpec, Election, ElectionBuilder, Mark, MarkCode,
    QuasiIds, VoteMethod,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Long,
    Wide,
    Jsonl,
}

impl Layout {
    pub fn parse(raw: &str) -> Result<Layout> {
        match raw.trim().to_lowercase().as_str() {
            "long" | "normalized" => Ok(Layout::Long),
            "wide" => Ok(Layout::Wide),
            "jsonl" | "ndjson" => Ok(Layout::Jsonl),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnRoles {
    pub ballot_id: String,
    pub precinct: String,
    pub ballot_style: String,
    pub vote_method: String,
    pub contest_id: String,
    pub choice_id: String,
    pub mark_kind: String,
    pub page: Option<String>,
}

impl Default for ColumnRoles {
    fn default() -> Self {
        ColumnRoles {
            ballot_id: "ballot_id".into(),
            precinct: "precinct".into(),
            ballot_style: "ballot_style".into(),
            vote_method: "vote_method".into(),
            contest_id: "contest_id".into(),
            choice_id: "choice_id".into(),
            mark_kind: "mark_kind".into(),
            page: None,
        }
    }
}

/// Cell values standing for residual marks in wide files (and in long files
/// without a `mark_kind` column).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkTokens {
    pub undervote: String,
    pub overvote: String,
    pub writein: String,
}

impl Default for MarkTokens {
    fn default() -> Self {
        MarkTokens {
            undervote: "[undervote]".into(),
            overvote: "[overvote]".into(),
            writein: "[writein]".into(),
        }
    }
}

impl MarkTokens {
    fn classify(&self, cell: &str) -> Option<Mark> {
        if cell == self.undervote {
            Some(Mark::Undervote)
        } else if cell == self.overvote {
            Some(Mark::Overvote)
        } else if cell == self.writein {
            Some(Mark::Writein)
        } else {
            None
        }
    }

    fn token(&self, mark: &Mark) -> String {
        match mark {
            Mark::Candidate(c) => c.clone(),
            Mark::Undervote => self.undervote.clone(),
            Mark::Overvote => self.overvote.clone(),
            Mark::Writein => self.writein.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormatDescriptor {
    pub layout: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default)]
    pub columns: ColumnRoles,
    #[serde(default)]
    pub tokens: MarkTokens,
    /// When false and a page column is present, pages are kept as separate ballots.
    #[serde(default = "default_true")]
    pub pages_linked: bool,
    #[serde(default)]
    pub contests: Vec<ContestSpec>,
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_true() -> bool {
    true
}

impl FormatDescriptor {
    pub fn new(layout: Layout) -> FormatDescriptor {
        FormatDescriptor {
            layout: match layout {
                Layout::Long => "long",
                Layout::Wide => "wide",
                Layout::Jsonl => "jsonl",
            }
            .into(),
            delimiter: default_delimiter(),
            columns: ColumnRoles::default(),
            tokens: MarkTokens::default(),
            pages_linked: true,
            contests: Vec::new(),
        }
    }

    pub fn with_contests(mut self, contests: Vec<ContestSpec>) -> Self {
        self.contests = contests;
        self
    }

    pub fn from_toml_str(text: &str) -> Result<FormatDescriptor> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<FormatDescriptor> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("descriptor serializes")
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::parse(&self.layout)
    }

    fn delimiter_byte(&self) -> Result<u8> {
        match self.delimiter.as_str() {
            "\\t" | "\t" | "tab" => Ok(b'\t'),
            d if d.len() == 1 => Ok(d.as_bytes()[0]),
            d => Err(Error::Config(format!("unsupported delimiter `{d}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line (or record) number in the source.
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub source: String,
    pub layout: String,
    pub rows_read: u64,
    pub records: usize,
    pub rejected: Vec<RejectedRow>,
    pub empty_input: bool,
    pub contests: usize,
    pub precincts: usize,
    pub styles: usize,
    pub methods: usize,
    /// Contests ingested but excluded from revelation math (vote for more than one).
    pub multi_winner_contests: Vec<String>,
    pub split_pages: bool,
}

struct PendingBallot {
    qi: QuasiIds,
    marks: Vec<MarkCode>,
    pages: BTreeSet<String>,
}

/// Collects ballots while contests may still be discovered.
struct Accumulator {
    contests: Vec<ContestSpec>,
    declared: bool,
    contest_slot: HashMap<String, usize>,
    choice_slot: Vec<HashMap<String, usize>>,
    ballots: Vec<(String, PendingBallot)>,
    ballot_slot: HashMap<String, usize>,
    split_pages: bool,
}

enum RowError {
    Reject(String),
    Fatal(Error),
}

impl From<Error> for RowError {
    fn from(e: Error) -> Self {
        RowError::Fatal(e)
    }
}

impl Accumulator {
    fn new(declared: Vec<ContestSpec>) -> Accumulator {
        let mut acc = Accumulator {
            contests: Vec::new(),
            declared: !declared.is_empty(),
            contest_slot: HashMap::new(),
            choice_slot: Vec::new(),
            ballots: Vec::new(),
            ballot_slot: HashMap::new(),
            split_pages: false,
        };
        for mut c in declared {
            c.id = normalize_code(&c.id);
            c.choices = c.choices.iter().map(|x| normalize_code(x)).collect();
            acc.contest_slot.insert(c.id.clone(), acc.contests.len());
            acc.choice_slot.push(
                c.choices
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (x.clone(), i))
                    .collect(),
            );
            acc.contests.push(c);
        }
        acc
    }

    fn contest(&mut self, raw: &str) -> std::result::Result<usize, RowError> {
        if let Some(&c) = self.contest_slot.get(raw) {
            return Ok(c);
        }
        let id = normalize_code(raw);
        if let Some(&c) = self.contest_slot.get(&id) {
            return Ok(c);
        }
        if id.is_empty() {
            return Err(RowError::Reject("empty contest id".into()));
        }
        if self.declared {
            return Err(RowError::Reject(format!("undeclared contest `{id}`")));
        }
        let c = self.contests.len();
        self.contests.push(ContestSpec {
            id: id.clone(),
            title: raw.trim().to_string(),
            choices: Vec::new(),
            vote_for: 1,
            federal: false,
        });
        self.choice_slot.push(HashMap::new());
        self.contest_slot.insert(id, c);
        Ok(c)
    }

    fn candidate(&mut self, contest: usize, raw: &str) -> std::result::Result<MarkCode, RowError> {
        if let Some(&i) = self.choice_slot[contest].get(raw) {
            return Ok(MarkCode::candidate(i));
        }
        let choice = normalize_code(raw);
        if let Some(&i) = self.choice_slot[contest].get(&choice) {
            return Ok(MarkCode::candidate(i));
        }
        if choice.is_empty() {
            return Err(RowError::Reject("candidate mark without a choice".into()));
        }
        if self.declared {
            return Err(RowError::Reject(format!(
                "choice `{choice}` not listed in contest `{}`",
                self.contests[contest].id
            )));
        }
        let i = self.contests[contest].choices.len();
        self.contests[contest].choices.push(choice.clone());
        self.choice_slot[contest].insert(choice, i);
        Ok(MarkCode::candidate(i))
    }

    fn code(&mut self, contest: usize, mark: &Mark) -> std::result::Result<MarkCode, RowError> {
        match mark {
            Mark::Candidate(choice) => self.candidate(contest, choice),
            Mark::Undervote => Ok(MarkCode::UNDERVOTE),
            Mark::Overvote => Ok(MarkCode::OVERVOTE),
            Mark::Writein => Ok(MarkCode::WRITEIN),
        }
    }

    fn ballot_key(&mut self, id: &str, page: Option<&str>, linked: bool) -> String {
        match page {
            Some(p) if !linked && !p.trim().is_empty() => {
                self.split_pages = true;
                format!("{}#p{}", id.trim(), p.trim())
            }
            _ => id.trim().to_string(),
        }
    }

    /// Start (or, for linked pages, continue) a ballot in a per-ballot layout.
    fn open_ballot(
        &mut self,
        key: String,
        qi: QuasiIds,
        page: Option<&str>,
    ) -> std::result::Result<usize, RowError> {
        check_qi(&key, &qi)?;
        if let Some(&slot) = self.ballot_slot.get(&key) {
            let pending = &mut self.ballots[slot].1;
            let page = page.map(str::trim).filter(|p| !p.is_empty());
            match page {
                Some(p) if pending.qi == qi && pending.pages.insert(p.to_string()) => Ok(slot),
                _ => Err(RowError::Fatal(Error::DuplicateBallot(key))),
            }
        } else {
            let slot = self.ballots.len();
            let mut pages = BTreeSet::new();
            if let Some(p) = page.map(str::trim).filter(|p| !p.is_empty()) {
                pages.insert(p.to_string());
            }
            self.ballot_slot.insert(key.clone(), slot);
            self.ballots.push((
                key,
                PendingBallot {
                    qi,
                    marks: Vec::new(),
                    pages,
                },
            ));
            Ok(slot)
        }
    }

    /// Long layout: a row names one (ballot, contest) pair.
    fn long_row_ballot(&mut self, key: String, qi: QuasiIds) -> std::result::Result<usize, RowError> {
        check_qi(&key, &qi)?;
        if let Some(&slot) = self.ballot_slot.get(&key) {
            if self.ballots[slot].1.qi != qi {
                return Err(RowError::Fatal(Error::DuplicateBallot(key)));
            }
            Ok(slot)
        } else {
            self.open_ballot(key, qi, None)
        }
    }

    fn set_mark(&mut self, slot: usize, contest: usize, code: MarkCode) -> std::result::Result<(), RowError> {
        let (key, pending) = &mut self.ballots[slot];
        if pending.marks.len() <= contest {
            pending.marks.resize(contest + 1, MarkCode::ABSENT);
        }
        if pending.marks[contest].is_present() {
            return Err(RowError::Fatal(Error::DuplicateBallot(format!(
                "{key} (contest `{}` marked twice)",
                self.contests[contest].id
            ))));
        }
        pending.marks[contest] = code;
        Ok(())
    }

    fn finish(self) -> Result<Election> {
        let width = self.contests.len();
        let mut builder = ElectionBuilder::new(self.contests)?;
        builder.split_pages = self.split_pages;
        for (key, mut pending) in self.ballots {
            pending.marks.resize(width, MarkCode::ABSENT);
            builder.push_coded(&key, &pending.qi, &pending.marks)?;
        }
        Ok(builder.finish())
    }
}

fn check_qi(key: &str, qi: &QuasiIds) -> std::result::Result<(), RowError> {
    if key.is_empty() {
        return Err(RowError::Reject("empty ballot id".into()));
    }
    if qi.precinct.trim().is_empty() {
        return Err(RowError::Reject("empty precinct".into()));
    }
    if qi.ballot_style.trim().is_empty() {
        return Err(RowError::Reject("empty ballot style".into()));
    }
    if qi.vote_method.label().is_empty() {
        return Err(RowError::Reject("empty vote method".into()));
    }
    Ok(())
}

fn parse_mark_kind(kind: &str, choice: &str) -> std::result::Result<Mark, String> {
    match normalize_code(kind).as_str() {
        "candidate" | "choice" | "vote" => Ok(Mark::Candidate(choice.to_string())),
        "undervote" | "under" | "blank" => Ok(Mark::Undervote),
        "overvote" | "over" => Ok(Mark::Overvote),
        "writein" | "write-in" | "write_in" => Ok(Mark::Writein),
        other => Err(format!("unparseable mark kind `{other}`")),
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn optional_column(headers: &csv::StringRecord, name: Option<&str>) -> Option<usize> {
    name.and_then(|n| headers.iter().position(|h| h.trim() == n))
}

/// Read a cast vote record file described by `descriptor`.
pub fn ingest_cvr(path: &Path, descriptor: &FormatDescriptor) -> Result<(Election, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), descriptor, &path.display().to_string())
}

pub fn ingest_reader<R: Read>(
    reader: R,
    descriptor: &FormatDescriptor,
    source: &str,
) -> Result<(Election, IngestReport)> {
    let layout = descriptor.layout()?;
    let mut acc = Accumulator::new(descriptor.contests.clone());
    let mut report = IngestReport {
        source: source.to_string(),
        layout: descriptor.layout.clone(),
        ..Default::default()
    };
    match layout {
        Layout::Long => read_long(reader, descriptor, &mut acc, &mut report)?,
        Layout::Wide => read_wide(reader, descriptor, &mut acc, &mut report)?,
        Layout::Jsonl => read_jsonl(reader, descriptor, &mut acc, &mut report)?,
    }
    let election = acc.finish()?;
    report.empty_input = report.rows_read == 0;
    report.records = election.n_ballots();
    report.contests = election.n_contests();
    report.precincts = election.distinct_precincts();
    report.styles = election.distinct_styles();
    report.methods = election.distinct_methods();
    report.split_pages = election.split_pages();
    report.multi_winner_contests = election
        .contests()
        .iter()
        .filter(|c| !c.single_winner())
        .map(|c| c.id.clone())
        .collect();
    Ok((election, report))
}

fn csv_reader<R: Read>(reader: R, descriptor: &FormatDescriptor) -> Result<csv::Reader<R>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(descriptor.delimiter_byte()?)
        .flexible(true)
        .has_headers(true)
        .from_reader(reader))
}

fn handle(report: &mut IngestReport, line: u64, outcome: std::result::Result<(), RowError>) -> Result<()> {
    match outcome {
        Ok(()) => Ok(()),
        Err(RowError::Reject(reason)) => {
            report.rejected.push(RejectedRow { line, reason });
            Ok(())
        }
        Err(RowError::Fatal(e)) => Err(e),
    }
}

fn read_long<R: Read>(
    reader: R,
    d: &FormatDescriptor,
    acc: &mut Accumulator,
    report: &mut IngestReport,
) -> Result<()> {
    let mut rdr = csv_reader(reader, d)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(());
    }
    let cols = &d.columns;
    let ballot = column(&headers, &cols.ballot_id)?;
    let precinct = column(&headers, &cols.precinct)?;
    let style = column(&headers, &cols.ballot_style)?;
    let method = column(&headers, &cols.vote_method)?;
    let contest = column(&headers, &cols.contest_id)?;
    let choice = column(&headers, &cols.choice_id)?;
    let kind = optional_column(&headers, Some(&cols.mark_kind));
    let page = optional_column(&headers, cols.page.as_deref());

    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        report.rows_read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(report.rows_read + 1);
        let get = |i: usize| record.get(i).unwrap_or("");
        let outcome = (|| {
            let key = acc.ballot_key(get(ballot), page.map(get), d.pages_linked);
            let qi = QuasiIds {
                precinct: get(precinct).to_string(),
                ballot_style: get(style).to_string(),
                vote_method: VoteMethod::parse(get(method)),
            };
            let mark = match kind {
                Some(k) => parse_mark_kind(get(k), get(choice)).map_err(RowError::Reject)?,
                None => d
                    .tokens
                    .classify(get(choice).trim())
                    .unwrap_or_else(|| Mark::Candidate(get(choice).to_string())),
            };
            let c = acc.contest(get(contest))?;
            let code = acc.code(c, &mark)?;
            let slot = acc.long_row_ballot(key, qi)?;
            acc.set_mark(slot, c, code)
        })();
        handle(report, line, outcome)?;
    }
    Ok(())
}

fn read_wide<R: Read>(
    reader: R,
    d: &FormatDescriptor,
    acc: &mut Accumulator,
    report: &mut IngestReport,
) -> Result<()> {
    let mut rdr = csv_reader(reader, d)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(());
    }
    let cols = &d.columns;
    let ballot = column(&headers, &cols.ballot_id)?;
    let precinct = column(&headers, &cols.precinct)?;
    let style = column(&headers, &cols.ballot_style)?;
    let method = column(&headers, &cols.vote_method)?;
    let page = optional_column(&headers, cols.page.as_deref());
    let fixed = [Some(ballot), Some(precinct), Some(style), Some(method), page];

    let mut contest_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if fixed.contains(&Some(i)) {
            continue;
        }
        match acc.contest(h) {
            Ok(c) => contest_cols.push((i, c)),
            Err(RowError::Reject(reason)) => return Err(Error::InvalidRecord(reason)),
            Err(RowError::Fatal(e)) => return Err(e),
        }
    }

    let mut method_cache: HashMap<String, VoteMethod> = HashMap::new();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        report.rows_read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(report.rows_read + 1);
        let get = |i: usize| record.get(i).unwrap_or("");
        let outcome = (|| {
            let mut codes = Vec::with_capacity(contest_cols.len());
            for &(i, c) in &contest_cols {
                let cell = get(i).trim();
                if cell.is_empty() {
                    continue;
                }
                let code = match d.tokens.classify(cell) {
                    Some(m) => acc.code(c, &m)?,
                    None => acc.candidate(c, cell)?,
                };
                codes.push((c, code));
            }
            let raw_method = get(method);
            let vote_method = match method_cache.get(raw_method) {
                Some(m) => m.clone(),
                None => {
                    let m = VoteMethod::parse(raw_method);
                    method_cache.insert(raw_method.to_string(), m.clone());
                    m
                }
            };
            let qi = QuasiIds {
                precinct: get(precinct).to_string(),
                ballot_style: get(style).to_string(),
                vote_method,
            };
            let page_value = page.map(get);
            let key = acc.ballot_key(get(ballot), page_value, d.pages_linked);
            let slot = acc.open_ballot(key, qi, page_value.filter(|_| d.pages_linked))?;
            for (c, code) in codes {
                acc.set_mark(slot, c, code)?;
            }
            Ok(())
        })();
        handle(report, line, outcome)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct JsonBallot {
    ballot_id: String,
    precinct: String,
    ballot_style: String,
    vote_method: VoteMethod,
    #[serde(default)]
    page: Option<String>,
    #[serde(default)]
    marks: std::collections::BTreeMap<String, Mark>,
}

fn read_jsonl<R: Read>(
    reader: R,
    d: &FormatDescriptor,
    acc: &mut Accumulator,
    report: &mut IngestReport,
) -> Result<()> {
    let reader = BufReader::new(reader);
    for (n, line) in reader.lines().enumerate() {
        let line_no = n as u64 + 1;
        let line = line.map_err(|e| Error::io("<jsonl input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows_read += 1;
        let outcome = (|| {
            let ballot: JsonBallot = serde_json::from_str(&line)
                .map_err(|e| RowError::Reject(format!("unparseable record: {e}")))?;
            let mut codes = Vec::with_capacity(ballot.marks.len());
            for (contest, mark) in &ballot.marks {
                let c = acc.contest(contest)?;
                codes.push((c, acc.code(c, mark)?));
            }
            let qi = QuasiIds {
                precinct: ballot.precinct,
                ballot_style: ballot.ballot_style,
                vote_method: ballot.vote_method,
            };
            let page = ballot.page.as_deref();
            let key = acc.ballot_key(&ballot.ballot_id, page, d.pages_linked);
            let slot = acc.open_ballot(key, qi, page.filter(|_| d.pages_linked))?;
            for (c, code) in codes {
                acc.set_mark(slot, c, code)?;
            }
            Ok(())
        })();
        handle(report, line_no, outcome)?;
    }
    Ok(())
}

/// Serialize an election in the layout named by `descriptor`.
pub fn write_cvr<W: Write>(election: &Election, descriptor: &FormatDescriptor, out: W) -> Result<()> {
    let layout = descriptor.layout()?;
    let mut out = BufWriter::new(out);
    match layout {
        Layout::Long => {
            let mut w = csv::WriterBuilder::new()
                .delimiter(descriptor.delimiter_byte()?)
                .from_writer(&mut out);
            let c = &descriptor.columns;
            w.write_record([
                &c.ballot_id,
                &c.precinct,
                &c.ballot_style,
                &c.vote_method,
                &c.contest_id,
                &c.choice_id,
                &c.mark_kind,
            ])?;
            for b in 0..election.n_ballots() {
                for (ci, &code) in election.marks_row(b).iter().enumerate() {
                    let Some(mark) = election.decode_mark(ci, code) else {
                        continue;
                    };
                    let choice = match &mark {
                        Mark::Candidate(x) => x.as_str(),
                        _ => "",
                    };
                    w.write_record([
                        election.ballot_id(b),
                        election.precinct(b),
                        election.ballot_style(b),
                        election.vote_method(b).label(),
                        &election.contest(ci).id,
                        choice,
                        mark.kind_label(),
                    ])?;
                }
            }
            w.flush().map_err(|e| Error::io("<cvr output>", e))?;
        }
        Layout::Wide => {
            let mut w = csv::WriterBuilder::new()
                .delimiter(descriptor.delimiter_byte()?)
                .from_writer(&mut out);
            let c = &descriptor.columns;
            let mut header = vec![
                c.ballot_id.clone(),
                c.precinct.clone(),
                c.ballot_style.clone(),
                c.vote_method.clone(),
            ];
            header.extend(election.contests().iter().map(|c| c.id.clone()));
            w.write_record(&header)?;
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            for b in 0..election.n_ballots() {
                row.clear();
                row.push(election.ballot_id(b).to_string());
                row.push(election.precinct(b).to_string());
                row.push(election.ballot_style(b).to_string());
                row.push(election.vote_method(b).label().to_string());
                for (ci, &code) in election.marks_row(b).iter().enumerate() {
                    row.push(
                        election
                            .decode_mark(ci, code)
                            .map(|m| descriptor.tokens.token(&m))
                            .unwrap_or_default(),
                    );
                }
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::io("<cvr output>", e))?;
        }
        Layout::Jsonl => {
            for record in election.records() {
                serde_json::to_writer(&mut out, &record)?;
                out.write_all(b"\n").map_err(|e| Error::io("<cvr output>", e))?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<cvr output>", e))?;
    Ok(())
}

/// Convenience for tests and adapters: the records of an election as a list.
pub fn records_of(election: &Election) -> Vec<CastVoteRecord> {
    election.records().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn long_descriptor() -> FormatDescriptor {
        FormatDescriptor::new(Layout::Long)
    }

    const LONG: &str = "\
ballot_id,precinct,ballot_style,vote_method,contest_id,choice_id,mark_kind
b1,A,X,mail,pres,trump,candidate
b1,A,X,mail,tax,,undervote
b2,A,X,in_person,pres,biden,candidate
b3,A,X,mail,pres,,sparkle
";

    #[test]
    fn long_layout_with_row_reject() {
        let (e, r) = ingest_reader(LONG.as_bytes(), &long_descriptor(), "t").unwrap();
        assert_eq!(e.n_ballots(), 2);
        assert_eq!(r.rows_read, 4);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.rejected[0].line, 5);
        assert!(r.rejected[0].reason.contains("sparkle"));
        assert_eq!(r.contests, 2);
        assert_eq!(e.contest(0).choices, vec!["trump", "biden"]);
        assert_eq!(e.mark(0, 1), MarkCode::UNDERVOTE);
    }

    #[test]
    fn duplicate_pair_is_fatal() {
        let text = "ballot_id,precinct,ballot_style,vote_method,contest_id,choice_id,mark_kind\n\
                    b1,A,X,mail,pres,trump,candidate\n\
                    b1,A,X,mail,pres,biden,candidate\n";
        let err = ingest_reader(text.as_bytes(), &long_descriptor(), "t").unwrap_err();
        assert!(matches!(err, Error::DuplicateBallot(_)));
    }

    #[test]
    fn missing_column_and_unknown_format() {
        let text = "ballot_id,precinct,vote_method,contest_id,choice_id\nb1,A,mail,pres,x\n";
        let err = ingest_reader(text.as_bytes(), &long_descriptor(), "t").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "ballot_style"));
        let mut d = long_descriptor();
        d.layout = "xml".into();
        assert!(matches!(
            ingest_reader("".as_bytes(), &d, "t"),
            Err(Error::UnknownFormat(_))
        ));
    }

    #[test]
    fn empty_input_is_flagged() {
        let (e, r) = ingest_reader("".as_bytes(), &long_descriptor(), "t").unwrap();
        assert!(e.is_empty());
        assert!(r.empty_input);
    }

    #[test]
    fn wide_layout_and_duplicate_rows() {
        let d = FormatDescriptor::new(Layout::Wide);
        let text = "ballot_id,precinct,ballot_style,vote_method,pres,tax\n\
                    b1,A,X,mail,trump,[undervote]\n\
                    b2,A,X,mail,,yes\n";
        let (e, r) = ingest_reader(text.as_bytes(), &d, "t").unwrap();
        assert_eq!(r.records, 2);
        assert_eq!(e.mark(1, 0), MarkCode::ABSENT);
        let dup = format!("{text}b1,A,X,mail,trump,yes\n");
        assert!(matches!(
            ingest_reader(dup.as_bytes(), &d, "t"),
            Err(Error::DuplicateBallot(_))
        ));
    }

    #[test]
    fn declared_contests_reject_unlisted_choices() {
        let d = long_descriptor().with_contests(vec![ContestSpec::new("pres", &["trump", "biden"])]);
        let text = "ballot_id,precinct,ballot_style,vote_method,contest_id,choice_id,mark_kind\n\
                    b1,A,X,mail,pres,west,candidate\n\
                    b2,A,X,mail,gov,x,candidate\n\
                    b3,A,X,mail,PRES, Biden ,candidate\n";
        let (e, r) = ingest_reader(text.as_bytes(), &d, "t").unwrap();
        assert_eq!(r.rejected.len(), 2);
        assert_eq!(e.n_ballots(), 1);
        assert_eq!(e.mark(0, 0), MarkCode::candidate(1));
    }

    #[test]
    fn unlinked_pages_become_separate_ballots() {
        let mut d = FormatDescriptor::new(Layout::Wide);
        d.columns.page = Some("page".into());
        d.pages_linked = false;
        let text = "ballot_id,page,precinct,ballot_style,vote_method,pres,tax\n\
                    b1,1,A,X,mail,trump,\n\
                    b1,2,A,X,mail,,yes\n";
        let (e, r) = ingest_reader(text.as_bytes(), &d, "t").unwrap();
        assert_eq!(e.n_ballots(), 2);
        assert!(r.split_pages);

        d.pages_linked = true;
        let (e, r) = ingest_reader(text.as_bytes(), &d, "t").unwrap();
        assert_eq!(e.n_ballots(), 1);
        assert!(!r.split_pages);
        assert!(e.mark(0, 0).is_candidate() && e.mark(0, 1).is_candidate());
    }

    #[test]
    fn jsonl_round_trip() {
        let (e, _) = ingest_reader(LONG.as_bytes(), &long_descriptor(), "t").unwrap();
        let d = FormatDescriptor::new(Layout::Jsonl).with_contests(e.contests().to_vec());
        let mut buf = Vec::new();
        write_cvr(&e, &d, &mut buf).unwrap();
        let (back, _) = ingest_reader(buf.as_slice(), &d, "t").unwrap();
        assert_eq!(records_of(&back), records_of(&e));
    }
}
