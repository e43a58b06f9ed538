//! Benchmark datasets, resumable evaluation runs and scoring.

pub mod convert;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::rag::{RagEngine, RagError, RagTrace, StrategyConfig, StrategyKind};
use crate::stats::{LongRow, LongScores, StatsError};
use crate::task::{BenchmarkItem, Gold, ItemError, TaskKind};
use crate::verbalizer::{self, AnswerKind, CanonicalAnswer};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {error}")]
    Invalid {
        path: PathBuf,
        line: usize,
        error: ItemError,
    },
    #[error("{path}:{line}: duplicate item id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("{path}:{line}: expected a {expected} item, found {found}")]
    TaskMismatch {
        path: PathBuf,
        line: usize,
        expected: TaskKind,
        found: TaskKind,
    },
    #[error("{path}:{line}: corrupt run log: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("run log holds records of {found}, not {expected}")]
    LogMismatch { expected: String, found: String },
    #[error("records mix {what}: {a:?} and {b:?}")]
    Mixed { what: &'static str, a: String, b: String },
    #[error("no records to score")]
    Empty,
    #[error("{0} items carry no correctness label")]
    NotScorable(TaskKind),
    #[error("run paused after {completed} of {total} records: {reason}")]
    Paused {
        completed: usize,
        total: usize,
        reason: String,
    },
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// A validated single-task benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub task: TaskKind,
    pub items: Vec<BenchmarkItem>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, task: TaskKind, items: Vec<BenchmarkItem>) -> Result<Self, BenchError> {
        let path = PathBuf::from("<memory>");
        let mut seen = HashSet::new();
        for (i, item) in items.iter().enumerate() {
            check_item(&path, i + 1, task, item, &mut seen)?;
        }
        Ok(Dataset {
            id: id.into(),
            task,
            items,
        })
    }

    pub fn counts_by_country(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for item in &self.items {
            *out.entry(item.country.as_str()).or_default() += 1;
        }
        out
    }
}

fn check_item(
    path: &Path,
    line: usize,
    task: TaskKind,
    item: &BenchmarkItem,
    seen: &mut HashSet<String>,
) -> Result<(), BenchError> {
    if item.task != task {
        return Err(BenchError::TaskMismatch {
            path: path.into(),
            line,
            expected: task,
            found: item.task,
        });
    }
    item.validate().map_err(|error| BenchError::Invalid {
        path: path.into(),
        line,
        error,
    })?;
    if !seen.insert(item.id.clone()) {
        return Err(BenchError::DuplicateId {
            path: path.into(),
            line,
            id: item.id.clone(),
        });
    }
    Ok(())
}

/// Loads a JSON-lines dataset of [`BenchmarkItem`]s. The dataset id is the
/// file stem.
pub fn load_dataset(kind: TaskKind, path: &Path) -> Result<Dataset, BenchError> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem = serde_json::from_str(&line).map_err(|e| BenchError::Schema {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        check_item(path, i + 1, kind, &item, &mut seen)?;
        items.push(item);
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| kind.to_string());
    let dataset = Dataset { id, task: kind, items };
    log::info!(
        "loaded {} {} items from {} ({} countries)",
        dataset.items.len(),
        kind,
        path.display(),
        dataset.counts_by_country().len()
    );
    Ok(dataset)
}

pub fn write_dataset<W: Write>(mut out: W, items: &[BenchmarkItem]) -> Result<(), BenchError> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// One (item, strategy, sample) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub run_id: String,
    pub dataset: String,
    pub item_id: String,
    pub task: TaskKind,
    pub country: String,
    pub strategy: StrategyConfig,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sample: u32,
    pub trace: RagTrace,
    /// Absent for open-ended items and for failed calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<CanonicalAnswer>,
    /// Absent for open-ended items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

pub type RecordKey = (String, String, u32);

impl EvaluationRecord {
    pub fn key(&self) -> RecordKey {
        (self.item_id.clone(), self.strategy.name(), self.sample)
    }

    pub fn failed(&self) -> bool {
        self.trace.error.is_some()
    }
}

/// Whether `answer` matches the item's gold; `None` for open-ended items.
pub fn is_correct(item: &BenchmarkItem, answer: &AnswerKind) -> Option<bool> {
    let gold = item.gold.as_ref()?;
    Some(match (gold, answer) {
        (Gold::Choice(g), AnswerKind::Choice(a)) => g == a,
        (Gold::Unsure, AnswerKind::Unsure) => true,
        _ => false,
    })
}

fn evaluate(
    run_id: &str,
    dataset: &Dataset,
    item: &BenchmarkItem,
    strategy: &StrategyConfig,
    sample: u32,
    engine: &RagEngine<'_>,
) -> Result<EvaluationRecord, RagError> {
    let mut record = EvaluationRecord {
        run_id: run_id.to_owned(),
        dataset: dataset.id.clone(),
        item_id: item.id.clone(),
        task: item.task,
        country: item.country.clone(),
        strategy: strategy.clone(),
        sample,
        trace: RagTrace::default(),
        answer: None,
        correct: None,
    };
    match engine.answer_sample(item, strategy, sample) {
        Ok(trace) => {
            if item.task != TaskKind::OpenEnded {
                let raw = trace.raw_answer.as_deref().unwrap_or("");
                let answer = verbalizer::normalize(item.task, raw, &item.choices);
                record.correct = is_correct(item, &answer.kind);
                record.answer = Some(answer);
            }
            record.trace = trace;
        }
        Err(failure) if is_fatal(&failure.error) => return Err(failure.error),
        Err(failure) => {
            log::warn!("{} / {}: {}", item.id, strategy.name(), failure.error);
            record.trace = *failure.trace;
            record.correct = item.gold.as_ref().map(|_| false);
        }
    }
    Ok(record)
}

/// Errors that stop a run instead of being recorded against one item.
fn is_fatal(e: &RagError) -> bool {
    match e {
        RagError::Gateway(g) => matches!(
            g,
            GatewayError::Exhausted { .. }
                | GatewayError::Quota { .. }
                | GatewayError::Transport(_)
                | GatewayError::MissingCredentials(_)
                | GatewayError::UnknownBackend(_)
                | GatewayError::GroundingUnsupported(_)
                | GatewayError::Io(_)
        ),
        RagError::MissingKnowledgeBase | RagError::InvalidStrategy(_) | RagError::Index(_) => true,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub run_id: String,
    pub strategies: Vec<StrategyConfig>,
    /// Generations per (item, strategy).
    pub samples: u32,
    pub workers: usize,
    /// Compute at most this many new records, then stop.
    pub limit: Option<usize>,
}

impl RunSpec {
    pub fn new(run_id: impl Into<String>, strategies: Vec<StrategyConfig>) -> Self {
        RunSpec {
            run_id: run_id.into(),
            strategies,
            samples: 1,
            workers: 1,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total: usize,
    /// Already present in the log when the run started.
    pub resumed: usize,
    pub computed: usize,
    pub failed: usize,
}

impl RunSummary {
    pub fn complete(&self) -> bool {
        self.resumed + self.computed == self.total
    }
}

/// Evaluates every (item, strategy, sample) not yet in the log at
/// `log_path`, appending records in canonical order (items, then
/// strategies, then samples). Each record is flushed as soon as it is
/// written, so an interrupted run resumes without repeating calls.
pub fn run(
    dataset: &Dataset,
    spec: &RunSpec,
    engine: &RagEngine<'_>,
    log_path: &Path,
) -> Result<RunSummary, BenchError> {
    for s in &spec.strategies {
        s.validate_for(dataset.task)?;
        if s.kind == StrategyKind::KbGrounded && !engine.has_kb() {
            return Err(RagError::MissingKnowledgeBase.into());
        }
    }
    let jobs: Vec<(usize, usize, u32)> = (0..dataset.items.len())
        .flat_map(|i| (0..spec.strategies.len()).flat_map(move |s| (0..spec.samples.max(1)).map(move |k| (i, s, k))))
        .collect();

    let done = recover_log(log_path, &spec.run_id, &dataset.id)?;
    let names: Vec<String> = spec.strategies.iter().map(StrategyConfig::name).collect();
    let mut pending: Vec<(usize, usize, u32)> = jobs
        .iter()
        .copied()
        .filter(|&(i, s, k)| !done.contains(&(dataset.items[i].id.clone(), names[s].clone(), k)))
        .collect();
    let mut summary = RunSummary {
        total: jobs.len(),
        resumed: jobs.len() - pending.len(),
        ..RunSummary::default()
    };
    if let Some(limit) = spec.limit {
        pending.truncate(limit);
    }
    if pending.is_empty() {
        return Ok(summary);
    }

    let mut log = OpenOptions::new().create(true).append(true).open(log_path)?;
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = spec.workers.clamp(1, pending.len());
    let mut fatal: Option<String> = None;
    let mut write_error: Option<BenchError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<EvaluationRecord, RagError>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, pending) = (&next, &stop, &pending);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(i, s, k)) = pending.get(j) else {
                    break;
                };
                let out = evaluate(&spec.run_id, dataset, &dataset.items[i], &spec.strategies[s], k, engine);
                if out.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                if tx.send((j, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut buffer: BTreeMap<usize, EvaluationRecord> = BTreeMap::new();
        let mut cursor = 0;
        for (j, out) in rx {
            match out {
                Ok(record) => {
                    buffer.insert(j, record);
                }
                Err(e) => {
                    fatal.get_or_insert_with(|| e.to_string());
                    // the slot stays empty; later records are still kept
                    continue;
                }
            }
            if fatal.is_some() || write_error.is_some() {
                continue;
            }
            while let Some(record) = buffer.remove(&cursor) {
                cursor += 1;
                if let Err(e) = append_record(&mut log, &record) {
                    write_error = Some(e);
                    stop.store(true, Ordering::SeqCst);
                    break;
                }
                summary.computed += 1;
                summary.failed += usize::from(record.failed());
            }
        }
        // After a pause, keep whatever finished past the gap so it is not
        // requested again on resume.
        if write_error.is_none() {
            for record in buffer.into_values() {
                if let Err(e) = append_record(&mut log, &record) {
                    write_error = Some(e);
                    break;
                }
                summary.computed += 1;
                summary.failed += usize::from(record.failed());
            }
        }
    });

    if let Some(e) = write_error {
        return Err(e);
    }
    if let Some(reason) = fatal {
        return Err(BenchError::Paused {
            completed: summary.resumed + summary.computed,
            total: summary.total,
            reason,
        });
    }
    Ok(summary)
}

fn append_record(log: &mut File, record: &EvaluationRecord) -> Result<(), BenchError> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    log.write_all(&line)?;
    log.flush()?;
    Ok(())
}

/// Drops a partial trailing line left by an interrupted write and returns
/// the keys already present.
fn recover_log(path: &Path, run_id: &str, dataset: &str) -> Result<HashSet<RecordKey>, BenchError> {
    let mut done = HashSet::new();
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(done),
        Err(e) => return Err(e.into()),
    };
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
    if complete < bytes.len() {
        log::warn!(
            "{}: dropping {} bytes of a partial record",
            path.display(),
            bytes.len() - complete
        );
        file.set_len(complete as u64)?;
        file.seek(SeekFrom::End(0))?;
    }
    for record in parse_records(path, &bytes[..complete])? {
        if record.run_id != run_id || record.dataset != dataset {
            return Err(BenchError::LogMismatch {
                expected: format!("{run_id}/{dataset}"),
                found: format!("{}/{}", record.run_id, record.dataset),
            });
        }
        done.insert(record.key());
    }
    Ok(done)
}

fn parse_records(path: &Path, bytes: &[u8]) -> Result<Vec<EvaluationRecord>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in bytes.split(|b| *b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        out.push(serde_json::from_slice(line).map_err(|e| BenchError::CorruptLog {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads a run log, ignoring a partial trailing line.
pub fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>, BenchError> {
    let bytes = std::fs::read(path)?;
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
    if complete < bytes.len() {
        log::warn!("{}: ignoring a partial trailing record", path.display());
    }
    parse_records(path, &bytes[..complete])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountryScore {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub dataset: String,
    pub task: TaskKind,
    pub strategy: String,
    pub records: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_country: BTreeMap<String, CountryScore>,
    pub malformed: usize,
    pub malformed_rate: f64,
    pub unsure: usize,
    /// Records whose pipeline failed; counted as incorrect.
    pub failed: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn same<'a>(what: &'static str, a: &'a str, b: &'a str) -> Result<(), BenchError> {
    if a == b {
        Ok(())
    } else {
        Err(BenchError::Mixed {
            what,
            a: a.to_owned(),
            b: b.to_owned(),
        })
    }
}

/// Scores the records of one (run, dataset, strategy).
pub fn score(records: &[EvaluationRecord]) -> Result<RunReport, BenchError> {
    let first = records.first().ok_or(BenchError::Empty)?;
    let strategy = first.strategy.name();
    let mut report = RunReport {
        run_id: first.run_id.clone(),
        dataset: first.dataset.clone(),
        task: first.task,
        strategy: strategy.clone(),
        records: records.len(),
        correct: 0,
        accuracy: 0.0,
        per_country: BTreeMap::new(),
        malformed: 0,
        malformed_rate: 0.0,
        unsure: 0,
        failed: 0,
    };
    for r in records {
        same("runs", &first.run_id, &r.run_id)?;
        same("datasets", &first.dataset, &r.dataset)?;
        same("strategies", &strategy, &r.strategy.name())?;
        let correct = r.correct.ok_or(BenchError::NotScorable(r.task))?;
        let entry = report.per_country.entry(r.country.clone()).or_default();
        entry.count += 1;
        if correct {
            entry.correct += 1;
            report.correct += 1;
        }
        match r.answer.as_ref().map(|a| &a.kind) {
            Some(AnswerKind::Malformed) => report.malformed += 1,
            Some(AnswerKind::Unsure) => report.unsure += 1,
            _ => {}
        }
        report.failed += usize::from(r.failed());
    }
    for c in report.per_country.values_mut() {
        c.accuracy = ratio(c.correct, c.count);
    }
    report.accuracy = ratio(report.correct, report.records);
    report.malformed_rate = ratio(report.malformed, report.records);
    Ok(report)
}

/// One report per (dataset, strategy), in order of first appearance.
pub fn score_by_strategy(records: &[EvaluationRecord]) -> Result<Vec<RunReport>, BenchError> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<EvaluationRecord>> = HashMap::new();
    for r in records {
        let key = (r.dataset.clone(), r.strategy.name());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.clone());
    }
    order.iter().map(|k| score(&groups[k])).collect()
}

/// `run_id,dataset,strategy,country,count,correct,accuracy,malformed_rate`;
/// the overall row uses country `all`.
pub fn write_reports_csv<W: Write>(out: W, reports: &[RunReport]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run_id",
        "dataset",
        "strategy",
        "country",
        "count",
        "correct",
        "accuracy",
        "malformed_rate",
    ])?;
    for r in reports {
        let mut row = |country: &str, count: usize, correct: usize, accuracy: f64, malformed: String| {
            w.write_record([
                r.run_id.as_str(),
                r.dataset.as_str(),
                r.strategy.as_str(),
                country,
                &count.to_string(),
                &correct.to_string(),
                &accuracy.to_string(),
                &malformed,
            ])
        };
        row("all", r.records, r.correct, r.accuracy, r.malformed_rate.to_string())?;
        for (country, c) in &r.per_country {
            row(country, c.count, c.correct, c.accuracy, String::new())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Correctness as 0/1 scores with strategy as the within factor, one
/// subject per item (samples averaged).
pub fn correctness_scores(records: &[EvaluationRecord]) -> Result<LongScores, BenchError> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let correct = r.correct.ok_or(BenchError::NotScorable(r.task))?;
        rows.push(LongRow {
            subject: format!("{}/{}", r.dataset, r.item_id),
            within: r.strategy.name(),
            between: None,
            score: if correct { 1.0 } else { 0.0 },
        });
    }
    Ok(LongScores::new(rows).aggregate_cells()?)
}

/// Open-ended responses for human rating:
/// `item_id,country,strategy,sample,prompt,response`.
pub fn write_responses_csv<W: Write>(out: W, records: &[EvaluationRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item_id", "country", "strategy", "sample", "prompt", "response"])?;
    for r in records {
        w.write_record([
            r.item_id.as_str(),
            r.country.as_str(),
            &r.strategy.name(),
            &r.sample.to_string(),
            r.trace.prompt.as_str(),
            r.trace.raw_answer.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}
