//! Prompt and query templates with `{{name}}` placeholders.
//!
//! Template bodies live in `templates/` and are compiled in. Rendering is a
//! single left-to-right scan, so substituted text is never re-expanded.

use thiserror::Error;

use crate::task::{Choice, TaskKind};

/// Bumped whenever any template body changes.
pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: no value for placeholder {{{{{name}}}}}")]
    MissingVar { template: &'static str, name: String },
    #[error("template {template}: unclosed placeholder at byte {offset}")]
    Unclosed { template: &'static str, offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub body: &'static str,
}

macro_rules! template {
    ($ident:ident, $file:literal) => {
        pub const $ident: Template = Template {
            name: $file,
            body: include_str!(concat!("../../templates/", $file, ".txt")),
        };
    };
}

template!(BLEND_ORIGINAL, "blend_original");
template!(BLEND_QUERY_CHOICES, "blend_query_choices");
template!(BLEND_RELEVANCY, "blend_relevancy");
template!(BLEND_RAG, "blend_rag");
template!(NORMAD_COUNTRY_ORIGINAL, "normad_country_original");
template!(NORMAD_VALUE_ORIGINAL, "normad_value_original");
template!(NORMAD_COUNTRY_RAG, "normad_country_rag");
template!(NORMAD_VALUE_RAG, "normad_value_rag");
template!(NORMAD_QUERY_COUNTRY, "normad_query_country");
template!(NORMAD_QUERY_VALUE, "normad_query_value");
template!(NORMAD_RELEVANCY, "normad_relevancy");
template!(STEREOTYPE_ORIGINAL, "stereotype_original");
template!(STEREOTYPE_QUERY_CHOICES, "stereotype_query_choices");
template!(STEREOTYPE_RELEVANCY, "stereotype_relevancy");
template!(STEREOTYPE_RAG, "stereotype_rag");
template!(OPEN_ENDED_ORIGINAL, "open_ended_original");
template!(OPEN_ENDED_RELEVANCY, "open_ended_relevancy");
template!(OPEN_ENDED_RAG, "open_ended_rag");

pub const ALL: [Template; 18] = [
    BLEND_ORIGINAL,
    BLEND_QUERY_CHOICES,
    BLEND_RELEVANCY,
    BLEND_RAG,
    NORMAD_COUNTRY_ORIGINAL,
    NORMAD_VALUE_ORIGINAL,
    NORMAD_COUNTRY_RAG,
    NORMAD_VALUE_RAG,
    NORMAD_QUERY_COUNTRY,
    NORMAD_QUERY_VALUE,
    NORMAD_RELEVANCY,
    STEREOTYPE_ORIGINAL,
    STEREOTYPE_QUERY_CHOICES,
    STEREOTYPE_RELEVANCY,
    STEREOTYPE_RAG,
    OPEN_ENDED_ORIGINAL,
    OPEN_ENDED_RELEVANCY,
    OPEN_ENDED_RAG,
];

impl Template {
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.body;
        while let Some(start) = rest.find("{{") {
            let Some(len) = rest[start + 2..].find("}}") else { break };
            out.push(&rest[start + 2..start + 2 + len]);
            rest = &rest[start + 4 + len..];
        }
        out
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let body = self.body;
        let mut out = String::with_capacity(body.len() + 256);
        let mut pos = 0;
        while let Some(rel) = body[pos..].find("{{") {
            let start = pos + rel;
            out.push_str(&body[pos..start]);
            let Some(len) = body[start + 2..].find("}}") else {
                return Err(TemplateError::Unclosed {
                    template: self.name,
                    offset: start,
                });
            };
            let name = &body[start + 2..start + 2 + len];
            let value =
                vars.iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::MissingVar {
                        template: self.name,
                        name: name.to_owned(),
                    })?;
            out.push_str(value);
            pos = start + 4 + len;
        }
        out.push_str(&body[pos..]);
        Ok(out)
    }
}

/// The choice block in the task's own format: `A. apple`, `1) Yes`, `(A) italian`.
pub fn choice_block(task: TaskKind, choices: &[Choice]) -> String {
    let line = |c: &Choice| match task {
        TaskKind::BlendMc => format!("{}. {}", c.label, c.text),
        TaskKind::NormadCountry | TaskKind::NormadCountryValue => format!("{}) {}", c.label, c.text),
        TaskKind::StereotypeAvoidance => format!("({}) {}", c.label, c.text),
        TaskKind::OpenEnded => c.text.clone(),
    };
    choices.iter().map(line).collect::<Vec<_>>().join("\n")
}

pub fn document_block<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts
        .into_iter()
        .map(|t| format!("- {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

const MINOR_WORDS: [&str; 4] = ["and", "of", "the", "da"];

/// `south_korea` → `South Korea`, `egypt` → `Egypt`.
pub fn display_country(country: &str) -> String {
    country
        .split(|c: char| c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .enumerate()
        .map(|(i, w)| {
            let lower = w.to_lowercase();
            if i > 0 && MINOR_WORDS.contains(&lower.as_str()) {
                lower
            } else {
                capitalize(w)
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

const SENTENCE_OPENERS: &[&str] = &[
    "a", "after", "all", "although", "an", "as", "at", "because", "before", "by", "during", "each", "every", "for",
    "from", "her", "his", "if", "in", "it", "its", "many", "most", "my", "on", "once", "one", "our", "since", "some",
    "that", "the", "their", "there", "these", "this", "those", "though", "to", "upon", "when", "whenever", "while",
    "with", "within", "your",
];

/// Lowercases the first word of a sentence continued after `In <country>, `
/// when it is a function word; names and other words keep their case.
pub fn continue_sentence(text: &str) -> String {
    let first = text.split(|c: char| !c.is_alphabetic()).next().unwrap_or("");
    if !first.is_empty() && SENTENCE_OPENERS.contains(&first.to_lowercase().as_str()) {
        lower_first(text)
    } else {
        text.to_owned()
    }
}

/// Lowercases the first character unless the first word is an acronym.
pub fn lower_first(text: &str) -> String {
    let first = text.split_whitespace().next().unwrap_or("");
    let letters: Vec<char> = first.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return text.to_owned();
    }
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}
