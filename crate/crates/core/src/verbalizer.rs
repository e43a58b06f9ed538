//! Maps free-form model output onto a canonical multiple-choice answer.
//!
//! Rules are tried in order and the first one that decides wins:
//!
//! 1. `json`: an `{"answer_choice": ...}` object anywhere in the output (BLEnD).
//! 2. `unsure`: a leading `(?)` (stereotype avoidance).
//! 3. `leading_label`: the output opens with a choice label (`B`, `(B)`,
//!    `B.`, `1)`), after stripping `Answer:`-style prefixes and markdown.
//! 4. `leading_text`: the output opens with a choice's text.
//! 5. `unique_text`: exactly one choice text appears as a whole phrase.
//!
//! Anything else is [`AnswerKind::Malformed`]. A rule that finds more than
//! one distinct choice also yields `Malformed` rather than falling through.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::sync::OnceLock;

use crate::task::{Choice, TaskKind, UNSURE_MARK};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "snake_case")]
pub enum AnswerKind {
    Choice(String),
    Unsure,
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Json,
    Unsure,
    LeadingLabel,
    LeadingText,
    UniqueText,
    None,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::Json => "json",
            Rule::Unsure => "unsure",
            Rule::LeadingLabel => "leading_label",
            Rule::LeadingText => "leading_text",
            Rule::UniqueText => "unique_text",
            Rule::None => "none",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalAnswer {
    pub kind: AnswerKind,
    pub matched_rule: Rule,
}

impl CanonicalAnswer {
    fn choice(label: &str, rule: Rule) -> Self {
        CanonicalAnswer {
            kind: AnswerKind::Choice(label.to_owned()),
            matched_rule: rule,
        }
    }

    fn malformed(rule: Rule) -> Self {
        CanonicalAnswer {
            kind: AnswerKind::Malformed,
            matched_rule: rule,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match &self.kind {
            AnswerKind::Choice(l) => Some(l),
            _ => None,
        }
    }

    pub fn is_malformed(&self) -> bool {
        self.kind == AnswerKind::Malformed
    }
}

enum Decision {
    Pick(String),
    Ambiguous,
    Pass,
}

type Tier = fn(&str, &[Choice]) -> Decision;

pub fn normalize(task: TaskKind, raw: &str, choices: &[Choice]) -> CanonicalAnswer {
    if !task.is_multiple_choice() || choices.is_empty() {
        return CanonicalAnswer::malformed(Rule::None);
    }
    let text = raw.trim();

    if task == TaskKind::BlendMc {
        if let Some(value) = json_answer(text) {
            match resolve_value(&value, choices) {
                Decision::Pick(l) => return CanonicalAnswer::choice(&l, Rule::Json),
                Decision::Ambiguous => return CanonicalAnswer::malformed(Rule::Json),
                Decision::Pass => {}
            }
        }
    }

    let body = strip_decoration(text);

    if task == TaskKind::StereotypeAvoidance && is_unsure(body) {
        return CanonicalAnswer {
            kind: AnswerKind::Unsure,
            matched_rule: Rule::Unsure,
        };
    }

    let tiers: [(Rule, Tier); 3] = [
        (Rule::LeadingLabel, leading_label),
        (Rule::LeadingText, leading_text),
        (Rule::UniqueText, unique_text),
    ];
    for (rule, tier) in tiers {
        match tier(body, choices) {
            Decision::Pick(l) => return CanonicalAnswer::choice(&l, rule),
            Decision::Ambiguous => return CanonicalAnswer::malformed(rule),
            Decision::Pass => {}
        }
    }
    CanonicalAnswer::malformed(Rule::None)
}

/// The answer in the task's own requested output format. Normalizing it
/// again yields the same canonical answer.
pub fn render_canonical(task: TaskKind, kind: &AnswerKind, choices: &[Choice]) -> Option<String> {
    match kind {
        AnswerKind::Malformed => None,
        AnswerKind::Unsure => Some(UNSURE_MARK.to_owned()),
        AnswerKind::Choice(label) => Some(match task {
            TaskKind::BlendMc => serde_json::json!({ "answer_choice": label }).to_string(),
            TaskKind::NormadCountry | TaskKind::NormadCountryValue => {
                let text = choices.iter().find(|c| &c.label == label)?.text.as_str();
                format!("{label}) {text}")
            }
            TaskKind::StereotypeAvoidance => format!("({label})"),
            TaskKind::OpenEnded => return None,
        }),
    }
}

fn json_answer(text: &str) -> Option<String> {
    for (start, _) in text.match_indices('{') {
        let candidates = [text[start..].to_owned(), text[start..].replace('\'', "\"")];
        for candidate in &candidates {
            let mut stream = serde_json::Deserializer::from_str(candidate).into_iter::<Value>();
            if let Some(Ok(Value::Object(map))) = stream.next() {
                match map.get("answer_choice") {
                    Some(Value::String(s)) => return Some(s.clone()),
                    Some(Value::Number(n)) => return Some(n.to_string()),
                    _ => {}
                }
            }
        }
    }
    None
}

fn resolve_value(value: &str, choices: &[Choice]) -> Decision {
    let v = strip_decoration(value.trim());
    if v.is_empty() {
        return Decision::Pass;
    }
    match leading_label(v, choices) {
        Decision::Pass => {}
        d => return d,
    }
    if let Some(c) = choices.iter().find(|c| c.text.eq_ignore_ascii_case(v)) {
        return Decision::Pick(c.label.clone());
    }
    Decision::Pass
}

fn decoration_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?i)^[\s*_#>`"']*(?:(?:the\s+)?(?:final\s+|correct\s+|my\s+)?answer(?:\s*\([^)]*\))?[\s*_`]*(?::|\bis\b)[\s*_`"']*)?"#,
        )
        .expect("valid regex")
    })
}

/// Drops leading markdown, quotes and `Answer:` / `**Answer**:` /
/// `Answer (Yes, No or Neither):` prefixes.
pub fn strip_decoration(text: &str) -> &str {
    let m = decoration_re().find(text).map_or(0, |m| m.end());
    text[m..].trim_start()
}

fn is_unsure(body: &str) -> bool {
    body == "?" || body.starts_with(UNSURE_MARK)
}

/// Length of a label token at the start of `body`, and the label.
fn label_prefix<'a>(body: &str, choices: &'a [Choice]) -> Option<(usize, &'a Choice)> {
    let (open, rest) = match body.strip_prefix('(') {
        Some(r) => (true, r),
        None => (false, body),
    };
    let token_len = rest
        .char_indices()
        .find(|(_, c)| !c.is_ascii_alphanumeric())
        .map_or(rest.len(), |(i, _)| i);
    if token_len == 0 {
        return None;
    }
    let token = &rest[..token_len];
    let mut end = token_len;
    let after = &rest[end..];
    let closed = after.starts_with(')');
    if open && !closed {
        return None;
    }
    if closed || after.starts_with(['.', ':']) {
        end += 1;
    }
    let decorated = open || closed || end > token_len;
    let choice = choices
        .iter()
        .find(|c| c.label == token || (decorated && c.label.eq_ignore_ascii_case(token)))?;
    // a bare lowercase letter is more likely a word than a label
    if !decorated && token.chars().all(|c| c.is_ascii_lowercase()) {
        return None;
    }
    Some((end + open as usize, choice))
}

fn leading_label(body: &str, choices: &[Choice]) -> Decision {
    let Some((end, choice)) = label_prefix(body, choices) else {
        return Decision::Pass;
    };
    let rest = body[end..].trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '-' | ':' | '*'));
    if let Some(other) = starts_with_choice_text(rest, choices) {
        if other.label != choice.label {
            return Decision::Ambiguous;
        }
    }
    if let Some(tail) = strip_conjunction(rest) {
        if label_prefix(tail, choices).is_some_and(|(_, c)| c.label != choice.label) {
            return Decision::Ambiguous;
        }
    }
    Decision::Pick(choice.label.clone())
}

fn strip_conjunction(rest: &str) -> Option<&str> {
    let lower = rest.to_ascii_lowercase();
    ["or ", "and ", "/ ", "/", ", "]
        .iter()
        .find(|p| lower.starts_with(*p))
        .map(|p| rest[p.len()..].trim_start())
}

fn word_boundary_after(s: &str, at: usize) -> bool {
    s[at..].chars().next().is_none_or(|c| !c.is_alphanumeric())
}

fn starts_with_choice_text<'a>(body: &str, choices: &'a [Choice]) -> Option<&'a Choice> {
    choices
        .iter()
        .filter(|c| {
            let t = c.text.trim();
            body.len() >= t.len()
                && body.is_char_boundary(t.len())
                && body[..t.len()].eq_ignore_ascii_case(t)
                && word_boundary_after(body, t.len())
        })
        .max_by_key(|c| c.text.trim().len())
}

fn leading_text(body: &str, choices: &[Choice]) -> Decision {
    let Some(choice) = starts_with_choice_text(body, choices) else {
        return Decision::Pass;
    };
    let rest = body[choice.text.trim().len()..].trim_start_matches(|c: char| c.is_whitespace() || c == ',');
    if let Some(tail) = strip_conjunction(rest) {
        if starts_with_choice_text(tail, choices).is_some_and(|c| c.label != choice.label) {
            return Decision::Ambiguous;
        }
    }
    Decision::Pick(choice.label.clone())
}

fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let needle = needle.trim().to_lowercase();
    if needle.is_empty() {
        return false;
    }
    let hay = haystack.to_lowercase();
    hay.match_indices(&needle).any(|(i, m)| {
        let before_ok = hay[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        before_ok && word_boundary_after(&hay, i + m.len())
    })
}

fn unique_text(body: &str, choices: &[Choice]) -> Decision {
    let mut found: Vec<&Choice> = choices.iter().filter(|c| contains_phrase(body, &c.text)).collect();
    // "orange juice" also contains "orange"; keep only maximal phrases
    let texts: Vec<String> = found.iter().map(|c| c.text.trim().to_lowercase()).collect();
    found.retain(|c| {
        let t = c.text.trim().to_lowercase();
        !texts.iter().any(|o| o.len() > t.len() && contains_phrase(o, &t))
    });
    match found.as_slice() {
        [] => Decision::Pass,
        [one] => Decision::Pick(one.label.clone()),
        _ => Decision::Ambiguous,
    }
}
