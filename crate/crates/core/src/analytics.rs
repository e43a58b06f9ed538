//! Retrieval-behaviour analyses over run records: where retrieved
//! documents come from, how many survive the relevancy check, and how
//! often stereotype questions retrieve matching stereotypes.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bench::EvaluationRecord;
use crate::kb::Source;
use crate::rag::StrategyKind;
use crate::task::{BenchmarkItem, TaskKind};
use crate::verbalizer::AnswerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BeforeCheck,
    AfterCheck,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::BeforeCheck => "before_check",
            Stage::AfterCheck => "after_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDistribution {
    pub stage: Stage,
    pub counts: BTreeMap<Source, usize>,
    /// KB-grounded records aggregated.
    pub traces: usize,
    /// Non-selective records counted at `AfterCheck`, where kept equals
    /// retrieved.
    pub non_selective: usize,
}

impl SourceDistribution {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

fn kb_records(records: &[EvaluationRecord]) -> impl Iterator<Item = &EvaluationRecord> {
    records
        .iter()
        .filter(|r| r.strategy.kind == StrategyKind::KbGrounded && !r.failed())
}

/// Sources of retrieved documents (`BeforeCheck`) or of documents kept
/// after the relevancy check (`AfterCheck`). Records of other strategies
/// and failed records are skipped.
pub fn source_distribution(records: &[EvaluationRecord], stage: Stage) -> SourceDistribution {
    let mut out = SourceDistribution {
        stage,
        counts: Source::ALL.iter().map(|s| (*s, 0)).collect(),
        traces: 0,
        non_selective: 0,
    };
    for r in kb_records(records) {
        out.traces += 1;
        let sources: Vec<Source> = match stage {
            Stage::BeforeCheck => r.trace.hits.iter().map(|h| h.doc.source).collect(),
            Stage::AfterCheck => {
                if !r.strategy.selective {
                    out.non_selective += 1;
                }
                r.trace.kept.iter().map(|d| d.source).collect()
            }
        };
        for s in sources {
            *out.counts.entry(s).or_default() += 1;
        }
    }
    if out.non_selective > 0 {
        log::warn!(
            "{} non-selective records counted after the relevancy check; their kept documents equal the retrieved ones",
            out.non_selective
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptHistogram {
    /// k → number of questions; every k in `0..=n` is present.
    pub bins: BTreeMap<usize, usize>,
    pub questions: usize,
}

/// Distribution of the number of documents kept per question.
pub fn kept_histogram(records: &[EvaluationRecord]) -> KeptHistogram {
    let mut bins = BTreeMap::new();
    let mut questions = 0;
    let mut max_n = 0;
    for r in kb_records(records) {
        questions += 1;
        max_n = max_n.max(r.strategy.n);
        *bins.entry(r.trace.k()).or_default() += 1;
    }
    for k in 0..=max_n {
        bins.entry(k).or_insert(0);
    }
    KeptHistogram { bins, questions }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub dataset: String,
    pub task: TaskKind,
    pub strategy: String,
    pub stage: Stage,
    pub source: Source,
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptRow {
    pub dataset: String,
    pub task: TaskKind,
    pub strategy: String,
    pub k: usize,
    pub count: usize,
    pub percent: f64,
}

fn group_by_setting(records: &[EvaluationRecord]) -> Vec<((String, TaskKind, String), Vec<EvaluationRecord>)> {
    let mut order = Vec::new();
    let mut groups: HashMap<(String, TaskKind, String), Vec<EvaluationRecord>> = HashMap::new();
    for r in kb_records(records) {
        let key = (r.dataset.clone(), r.task, r.strategy.name());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.clone());
    }
    order
        .into_iter()
        .map(|k| {
            let v = groups.remove(&k).unwrap_or_default();
            (k, v)
        })
        .collect()
}

fn share(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Stage × source counts per (dataset, strategy). The after-check stage
/// is emitted for selective strategies only.
pub fn source_table(records: &[EvaluationRecord]) -> Vec<SourceRow> {
    let mut rows = Vec::new();
    for ((dataset, task, strategy), group) in group_by_setting(records) {
        let selective = group.first().is_some_and(|r| r.strategy.selective);
        let stages: &[Stage] = if selective {
            &[Stage::BeforeCheck, Stage::AfterCheck]
        } else {
            &[Stage::BeforeCheck]
        };
        for &stage in stages {
            let dist = source_distribution(&group, stage);
            let total = dist.total();
            for (source, count) in dist.counts {
                rows.push(SourceRow {
                    dataset: dataset.clone(),
                    task,
                    strategy: strategy.clone(),
                    stage,
                    source,
                    count,
                    share: share(count, total),
                });
            }
        }
    }
    rows
}

/// Percentage of questions per number of kept documents, per (dataset,
/// strategy).
pub fn kept_table(records: &[EvaluationRecord]) -> Vec<KeptRow> {
    let mut rows = Vec::new();
    for ((dataset, task, strategy), group) in group_by_setting(records) {
        let hist = kept_histogram(&group);
        for (k, count) in hist.bins {
            rows.push(KeptRow {
                dataset: dataset.clone(),
                task,
                strategy: strategy.clone(),
                k,
                count,
                percent: 100.0 * share(count, hist.questions),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StereotypeMatch {
    pub strategy: String,
    pub questions: usize,
    /// Questions whose retrieved documents include a SeeGULL stereotype.
    pub retrieved_any: usize,
    /// Questions that retrieved a stereotype whose attribute appears in the
    /// question's quoted attribute and whose identity is one of the choices.
    pub exact_match: usize,
    /// Exact-match questions answered `(?)` without grounding and with a
    /// choice when grounded. Absent when vanilla answers are missing.
    pub flips: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// The quoted attribute of a stereotype question stem, without its final
/// period: `I know a person who is "a fighter."` → `a fighter`.
pub fn quoted_attribute(question: &str) -> Option<&str> {
    let start = question.find('"')? + 1;
    let len = question[start..].find('"')?;
    Some(question[start..start + len].trim().trim_end_matches('.').trim())
}

fn is_exact(item: &BenchmarkItem, identity: &str, attribute: &str) -> bool {
    let Some(asked) = quoted_attribute(&item.question) else {
        return false;
    };
    asked.to_lowercase().contains(&attribute.trim().to_lowercase())
        && item
            .choices
            .iter()
            .any(|c| c.text.trim().eq_ignore_ascii_case(identity.trim()))
}

/// One report per KB-grounded strategy over stereotype-avoidance records.
/// Vanilla records of the same items (sample 0) supply the flip baseline.
pub fn stereotype_match_report(records: &[EvaluationRecord], items: &[BenchmarkItem]) -> Vec<StereotypeMatch> {
    let by_id: HashMap<&str, &BenchmarkItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let stereo = |r: &&EvaluationRecord| r.task == TaskKind::StereotypeAvoidance && r.sample == 0;
    let vanilla: HashMap<&str, &EvaluationRecord> = records
        .iter()
        .filter(stereo)
        .filter(|r| r.strategy.kind == StrategyKind::Vanilla)
        .map(|r| (r.item_id.as_str(), r))
        .collect();

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&EvaluationRecord>> = HashMap::new();
    for r in kb_records(records).filter(stereo) {
        let name = r.strategy.name();
        if !groups.contains_key(&name) {
            order.push(name.clone());
        }
        groups.entry(name).or_default().push(r);
    }

    order
        .into_iter()
        .map(|strategy| {
            let group = &groups[&strategy];
            let mut report = StereotypeMatch {
                strategy,
                questions: 0,
                retrieved_any: 0,
                exact_match: 0,
                flips: Some(0),
                warnings: Vec::new(),
            };
            let mut missing = Vec::new();
            for r in group {
                let Some(item) = by_id.get(r.item_id.as_str()) else {
                    report.warnings.push(format!("no item {} in the dataset", r.item_id));
                    continue;
                };
                report.questions += 1;
                let stereotypes: Vec<(&str, &str)> = r.trace.hits.iter().filter_map(|h| h.doc.stereotype()).collect();
                if stereotypes.is_empty() {
                    continue;
                }
                report.retrieved_any += 1;
                if !stereotypes.iter().any(|(id, attr)| is_exact(item, id, attr)) {
                    continue;
                }
                report.exact_match += 1;
                let grounded_choice = matches!(r.answer.as_ref().map(|a| &a.kind), Some(AnswerKind::Choice(_)));
                match vanilla.get(r.item_id.as_str()) {
                    Some(v) => {
                        let vanilla_unsure = matches!(v.answer.as_ref().map(|a| &a.kind), Some(AnswerKind::Unsure));
                        if vanilla_unsure && grounded_choice {
                            if let Some(f) = report.flips.as_mut() {
                                *f += 1;
                            }
                        }
                    }
                    None => missing.push(r.item_id.clone()),
                }
            }
            if !missing.is_empty() {
                report.flips = None;
                report.warnings.push(format!(
                    "flip analysis skipped: no vanilla answer for {}",
                    missing.join(", ")
                ));
            }
            for w in &report.warnings {
                log::warn!("{}: {w}", report.strategy);
            }
            report
        })
        .collect()
}

pub fn write_source_csv<W: Write>(out: W, rows: &[SourceRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "task", "strategy", "stage", "source", "count", "share"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.task.as_str(),
            r.strategy.as_str(),
            r.stage.as_str(),
            &r.source.to_string(),
            &r.count.to_string(),
            &r.share.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_kept_csv<W: Write>(out: W, rows: &[KeptRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "task", "strategy", "k", "count", "percent"])?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            r.task.as_str(),
            r.strategy.as_str(),
            &r.k.to_string(),
            &r.count.to_string(),
            &r.percent.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
