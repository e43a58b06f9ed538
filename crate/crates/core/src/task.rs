//! Benchmark tasks and items shared by the pipeline, verbalizer and runner.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// BLEnD multiple-choice everyday-knowledge questions.
    BlendMc,
    /// NormAd social-acceptability stories, country context only.
    NormadCountry,
    /// NormAd with the country plus an explicit value paradigm (`Rule:`).
    NormadCountryValue,
    /// SeeGULL stereotype avoidance; `(?)` is the only correct answer.
    StereotypeAvoidance,
    /// Open-ended story prompts for human evaluation.
    OpenEnded,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::BlendMc,
        TaskKind::NormadCountry,
        TaskKind::NormadCountryValue,
        TaskKind::StereotypeAvoidance,
        TaskKind::OpenEnded,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::BlendMc => "blend_mc",
            TaskKind::NormadCountry => "normad_country",
            TaskKind::NormadCountryValue => "normad_country_value",
            TaskKind::StereotypeAvoidance => "stereotype_avoidance",
            TaskKind::OpenEnded => "open_ended",
        }
    }

    pub fn is_multiple_choice(&self) -> bool {
        !matches!(self, TaskKind::OpenEnded)
    }

    /// Whether the KB query may include the answer choices.
    pub fn supports_choice_query(&self) -> bool {
        matches!(self, TaskKind::BlendMc | TaskKind::StereotypeAvoidance)
    }

    pub fn is_normad(&self) -> bool {
        matches!(self, TaskKind::NormadCountry | TaskKind::NormadCountryValue)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

impl Choice {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Choice {
            label: label.into(),
            text: text.into(),
        }
    }
}

/// Gold answer; serialized as the choice label, or `(?)` for unsure.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Gold {
    Choice(String),
    Unsure,
}

pub const UNSURE_MARK: &str = "(?)";

impl TryFrom<String> for Gold {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        match s.trim() {
            "" => Err("empty gold label".into()),
            UNSURE_MARK => Ok(Gold::Unsure),
            label => Ok(Gold::Choice(label.to_owned())),
        }
    }
}

impl From<Gold> for String {
    fn from(g: Gold) -> String {
        match g {
            Gold::Choice(label) => label,
            Gold::Unsure => UNSURE_MARK.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub task: TaskKind,
    pub country: String,
    /// BLEnD question, NormAd story, stereotype stem, or open-ended request.
    pub question: String,
    #[serde(default)]
    pub choices: Vec<Choice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
    /// NormAd value paradigm, shown as the `Rule:` line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    /// Explicit KB query for open-ended items when it differs from the
    /// request text shown in prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_query: Option<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ItemError {
    #[error("item {id}: {message}")]
    Invalid { id: String, message: String },
}

impl BenchmarkItem {
    pub fn choice(&self, label: &str) -> Option<&Choice> {
        self.choices.iter().find(|c| c.label == label)
    }

    pub fn validate(&self) -> Result<(), ItemError> {
        let fail = |message: String| {
            Err(ItemError::Invalid {
                id: self.id.clone(),
                message,
            })
        };
        if self.id.trim().is_empty() {
            return fail("empty id".into());
        }
        if self.question.trim().is_empty() {
            return fail("empty question".into());
        }
        if self.country.trim().is_empty() {
            return fail("empty country".into());
        }
        let mut labels: Vec<&str> = self.choices.iter().map(|c| c.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return fail("duplicate choice labels".into());
        }
        if self
            .choices
            .iter()
            .any(|c| c.label.trim().is_empty() || c.text.trim().is_empty())
        {
            return fail("choice with empty label or text".into());
        }
        match self.task {
            TaskKind::OpenEnded => {
                if !self.choices.is_empty() {
                    return fail("open-ended items take no choices".into());
                }
                if self.gold.is_some() {
                    return fail("open-ended items take no gold answer".into());
                }
            }
            TaskKind::StereotypeAvoidance => {
                if self.choices.is_empty() {
                    return fail("multiple-choice item without choices".into());
                }
                if self.gold != Some(Gold::Unsure) {
                    return fail("stereotype-avoidance gold must be (?)".into());
                }
            }
            _ => {
                if self.choices.is_empty() {
                    return fail("multiple-choice item without choices".into());
                }
                match &self.gold {
                    Some(Gold::Choice(label)) if self.choice(label).is_some() => {}
                    Some(Gold::Choice(label)) => return fail(format!("gold {label:?} is not among the choices")),
                    Some(Gold::Unsure) => return fail("(?) is only valid for stereotype avoidance".into()),
                    None => return fail("missing gold answer".into()),
                }
            }
        }
        match (self.task, &self.value) {
            (TaskKind::NormadCountryValue, None) => fail("Country+Value item without a value".into()),
            (TaskKind::NormadCountryValue, Some(v)) if v.trim().is_empty() => {
                fail("Country+Value item with an empty value".into())
            }
            _ => Ok(()),
        }
    }
}
