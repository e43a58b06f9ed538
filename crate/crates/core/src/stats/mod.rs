//! Paired t-tests and repeated-measures ANOVA with an optional
//! between-subjects factor (split-plot design, no sphericity correction).

pub mod dist;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dist::{f_sf, reg_inc_beta, t_two_sided_p};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("all paired differences equal {0}; t is undefined")]
    ZeroVariance(f64),
    #[error("unbalanced design: {0}")]
    Unbalanced(String),
    #[error("factor {0} has a single level")]
    SingleLevel(&'static str),
    #[error("no error degrees of freedom left")]
    NoErrorDf,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df1: f64,
    /// Denominator degrees of freedom; absent for t.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    pub p: f64,
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Paired two-sided t-test on `x - y`.
pub fn paired_t(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    check_finite(x)?;
    check_finite(y)?;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let df = (n - 1) as f64;
    if d.iter().all(|v| *v == d[0]) {
        if d[0] == 0.0 {
            return Ok(TestResult {
                statistic: 0.0,
                df1: df,
                df2: None,
                p: 1.0,
            });
        }
        return Err(StatsError::ZeroVariance(d[0]));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / df;
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TestResult {
        statistic: t,
        df1: df,
        df2: None,
        p: t_two_sided_p(t, df),
    })
}

/// One observation in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub subject: String,
    pub within: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub between: Option<String>,
    pub score: f64,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let v: Option<String> = Option::deserialize(d)?;
    Ok(v.filter(|s| !s.trim().is_empty()))
}

/// Long-format scores: one row per (subject, within level).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LongScores {
    pub rows: Vec<LongRow>,
}

impl LongScores {
    pub fn new(rows: Vec<LongRow>) -> Self {
        LongScores { rows }
    }

    /// Reads `subject,within,between,score` CSV; `between` may be omitted or empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<LongRow>().enumerate() {
            let row = rec.map_err(|e| StatsError::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            if !row.score.is_finite() {
                return Err(StatsError::Parse {
                    line: i + 2,
                    message: "score is not finite".into(),
                });
            }
            rows.push(row);
        }
        Ok(LongScores { rows })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), StatsError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["subject", "within", "between", "score"])?;
        for r in &self.rows {
            let score = r.score.to_string();
            w.write_record([
                r.subject.as_str(),
                r.within.as_str(),
                r.between.as_deref().unwrap_or(""),
                score.as_str(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Averages repeated rows of the same (subject, within) cell, e.g. the
    /// ten prompts an evaluator rated under each strategy.
    pub fn aggregate_cells(&self) -> Result<LongScores, StatsError> {
        let mut cells: BTreeMap<(String, String), (Option<String>, f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = cells
                .entry((r.subject.clone(), r.within.clone()))
                .or_insert((r.between.clone(), 0.0, 0));
            if e.0 != r.between {
                return Err(StatsError::Unbalanced(format!(
                    "subject {} appears under more than one between level",
                    r.subject
                )));
            }
            e.1 += r.score;
            e.2 += 1;
        }
        Ok(LongScores {
            rows: cells
                .into_iter()
                .map(|((subject, within), (between, sum, n))| LongRow {
                    subject,
                    within,
                    between,
                    score: sum / n as f64,
                })
                .collect(),
        })
    }

    /// Scores of each subject under two within levels, paired by subject.
    pub fn paired(&self, a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>), StatsError> {
        let mut xs: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
        for r in &self.rows {
            let slot = xs.entry(r.subject.as_str()).or_default();
            let target = if r.within == a {
                &mut slot.0
            } else if r.within == b {
                &mut slot.1
            } else {
                continue;
            };
            if target.replace(r.score).is_some() {
                return Err(StatsError::Unbalanced(format!(
                    "subject {} has several {} scores",
                    r.subject, r.within
                )));
            }
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (subject, pair) in xs {
            match pair {
                (Some(p), Some(q)) => {
                    x.push(p);
                    y.push(q);
                }
                (None, None) => {}
                _ => {
                    return Err(StatsError::Unbalanced(format!(
                        "subject {subject} lacks a score for {a} or {b}"
                    )))
                }
            }
        }
        Ok((x, y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub ss: f64,
    pub df: f64,
    pub ms: f64,
    pub ss_error: f64,
    pub df_error: f64,
    pub ms_error: f64,
    pub f: f64,
    pub p: f64,
}

impl EffectRow {
    fn new(ss: f64, df: f64, ss_error: f64, df_error: f64) -> Self {
        let ms = ss / df;
        let ms_error = ss_error / df_error;
        let f = if ss <= 0.0 {
            0.0
        } else if ms_error <= 0.0 {
            f64::INFINITY
        } else {
            ms / ms_error
        };
        EffectRow {
            ss: ss.max(0.0),
            df,
            ms: ms.max(0.0),
            ss_error,
            df_error,
            ms_error,
            f,
            p: f_sf(f, df, df_error),
        }
    }

    pub fn result(&self) -> TestResult {
        TestResult {
            statistic: self.f,
            df1: self.df,
            df2: Some(self.df_error),
            p: self.p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub subjects: usize,
    pub within_levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub between_levels: Vec<String>,
    pub within: EffectRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub between: Option<EffectRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<EffectRow>,
}

/// Repeated-measures ANOVA on a design where every subject has exactly one
/// score per within level and belongs to one between level (if any).
///
/// Between-group sizes may differ. The within main effect is taken first
/// and the interaction is the remaining between-cell variation.
pub fn rm_anova(scores: &LongScores) -> Result<AnovaTable, StatsError> {
    let rows = &scores.rows;
    if rows.is_empty() {
        return Err(StatsError::TooFewObservations { needed: 4, got: 0 });
    }
    let within_levels: Vec<String> = rows
        .iter()
        .map(|r| r.within.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let has_between = rows.iter().any(|r| r.between.is_some());
    if has_between && rows.iter().any(|r| r.between.is_none()) {
        return Err(StatsError::Unbalanced("between level missing on some rows".into()));
    }
    let between_levels: Vec<String> = if has_between {
        rows.iter()
            .filter_map(|r| r.between.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        Vec::new()
    };
    let a = within_levels.len();
    if a < 2 {
        return Err(StatsError::SingleLevel("within"));
    }
    if has_between && between_levels.len() < 2 {
        return Err(StatsError::SingleLevel("between"));
    }
    let level_ix: HashMap<&str, usize> = within_levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let group_ix: HashMap<&str, usize> = between_levels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    // subject -> (group, per-level score)
    let mut subjects: BTreeMap<&str, (usize, Vec<Option<f64>>)> = BTreeMap::new();
    for r in rows {
        if !r.score.is_finite() {
            return Err(StatsError::NonFinite);
        }
        let g = r.between.as_deref().map_or(0, |b| group_ix[b]);
        let entry = subjects.entry(r.subject.as_str()).or_insert((g, vec![None; a]));
        if entry.0 != g {
            return Err(StatsError::Unbalanced(format!(
                "subject {} appears under more than one between level",
                r.subject
            )));
        }
        let slot = &mut entry.1[level_ix[r.within.as_str()]];
        if slot.replace(r.score).is_some() {
            return Err(StatsError::Unbalanced(format!(
                "subject {} has several scores for {}",
                r.subject, r.within
            )));
        }
    }
    let g_count = between_levels.len().max(1);
    let n = subjects.len();
    let mut data: Vec<(usize, Vec<f64>)> = Vec::with_capacity(n);
    for (name, (g, cells)) in subjects {
        let cells: Option<Vec<f64>> = cells.into_iter().collect();
        let Some(cells) = cells else {
            return Err(StatsError::Unbalanced(format!(
                "subject {name} lacks some within levels"
            )));
        };
        data.push((g, cells));
    }
    if n <= g_count {
        return Err(StatsError::NoErrorDf);
    }

    // Centering on one observation keeps constant data exactly zero.
    let origin = data[0].1[0];
    let y = |s: usize, k: usize| data[s].1[k] - origin;

    let total_n = (n * a) as f64;
    let grand = (0..n).map(|s| (0..a).map(|k| y(s, k)).sum::<f64>()).sum::<f64>() / total_n;
    let ss_total: f64 = (0..n)
        .flat_map(|s| (0..a).map(move |k| (s, k)))
        .map(|(s, k)| (y(s, k) - grand).powi(2))
        .sum();
    let subj_mean: Vec<f64> = (0..n)
        .map(|s| (0..a).map(|k| y(s, k)).sum::<f64>() / a as f64)
        .collect();
    let ss_subjects = a as f64 * subj_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let level_mean: Vec<f64> = (0..a)
        .map(|k| (0..n).map(|s| y(s, k)).sum::<f64>() / n as f64)
        .collect();
    let ss_within = n as f64 * level_mean.iter().map(|m| (m - grand).powi(2)).sum::<f64>();

    let df_a = (a - 1) as f64;
    if !has_between {
        let df_err = ((n - 1) * (a - 1)) as f64;
        let ss_err = (ss_total - ss_subjects - ss_within).max(0.0);
        return Ok(AnovaTable {
            subjects: n,
            within_levels,
            between_levels,
            within: EffectRow::new(ss_within, df_a, ss_err, df_err),
            between: None,
            interaction: None,
        });
    }

    let mut group_n = vec![0usize; g_count];
    let mut group_sum = vec![0.0; g_count];
    let mut cell_sum = vec![vec![0.0; a]; g_count];
    for (s, (g, _)) in data.iter().enumerate() {
        group_n[*g] += 1;
        for (k, cell) in cell_sum[*g].iter_mut().enumerate() {
            let v = y(s, k);
            *cell += v;
            group_sum[*g] += v;
        }
    }
    let ss_between: f64 = (0..g_count)
        .map(|g| {
            let mean = group_sum[g] / (group_n[g] * a) as f64;
            (group_n[g] * a) as f64 * (mean - grand).powi(2)
        })
        .sum();
    let ss_cells: f64 = (0..g_count)
        .flat_map(|g| (0..a).map(move |k| (g, k)))
        .map(|(g, k)| {
            let mean = cell_sum[g][k] / group_n[g] as f64;
            group_n[g] as f64 * (mean - grand).powi(2)
        })
        .sum();
    let ss_interaction = (ss_cells - ss_between - ss_within).max(0.0);
    let ss_subj_err = (ss_subjects - ss_between).max(0.0);
    let ss_within_err = (ss_total - ss_subjects - ss_within - ss_interaction).max(0.0);
    let df_b = (g_count - 1) as f64;
    let df_subj_err = (n - g_count) as f64;
    let df_within_err = ((n - g_count) * (a - 1)) as f64;

    Ok(AnovaTable {
        subjects: n,
        within_levels,
        between_levels,
        within: EffectRow::new(ss_within, df_a, ss_within_err, df_within_err),
        between: Some(EffectRow::new(ss_between, df_b, ss_subj_err, df_subj_err)),
        interaction: Some(EffectRow::new(
            ss_interaction,
            df_a * df_b,
            ss_within_err,
            df_within_err,
        )),
    })
}

/// Column names of a ratings file in wide-per-rating form: one row per
/// (evaluator, prompt, strategy) rating.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationColumns {
    pub evaluator: String,
    pub country: String,
    pub strategy: String,
    pub score: String,
}

impl Default for AnnotationColumns {
    fn default() -> Self {
        AnnotationColumns {
            evaluator: "evaluator_id".into(),
            country: "country".into(),
            strategy: "strategy".into(),
            score: "score".into(),
        }
    }
}

/// Converts a human-rating file into long scores with strategy as the
/// within factor and country as the between factor, averaging each
/// evaluator's ratings per strategy.
pub fn annotations_to_long<R: Read>(reader: R, cols: &AnnotationColumns) -> Result<LongScores, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| StatsError::Parse {
                line: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let (ie, ic, is, iv) = (
        find(&cols.evaluator)?,
        find(&cols.country)?,
        find(&cols.strategy)?,
        find(&cols.score)?,
    );
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |ix: usize| rec.get(ix).unwrap_or("").to_owned();
        let raw_score = field(iv);
        let score: f64 = raw_score.parse().map_err(|_| StatsError::Parse {
            line,
            message: format!("score {raw_score:?} is not a number"),
        })?;
        if !score.is_finite() {
            return Err(StatsError::Parse {
                line,
                message: "score is not finite".into(),
            });
        }
        rows.push(LongRow {
            subject: field(ie),
            within: field(is),
            between: Some(field(ic)).filter(|s| !s.is_empty()),
            score,
        });
    }
    LongScores::new(rows).aggregate_cells()
}
