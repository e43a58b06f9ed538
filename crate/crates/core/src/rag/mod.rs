//! Query rewriting, retrieval, relevancy filtering and prompt assembly.

pub mod templates;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{Citation, Gateway, GatewayError, GenerationRequest, DEFAULT_TEMPERATURE};
use crate::index::{Embedder, Embedding, IndexBuilder, IndexError, VectorIndex, DEFAULT_TOP_N};
use crate::kb::Document;
use crate::task::{BenchmarkItem, Choice, TaskKind};
use crate::verbalizer::{self, AnswerKind};

pub use templates::{TemplateError, TEMPLATE_VERSION};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("item {item} is a {found} item, expected {expected}")]
    TaskMismatch {
        item: String,
        expected: TaskKind,
        found: TaskKind,
    },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("KB-grounded strategy requires a knowledge base")]
    MissingKnowledgeBase,
    #[error("index entry {0} has no document")]
    UnknownDocument(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Vanilla,
    KbGrounded,
    SearchGrounded,
}

fn default_n() -> usize {
    DEFAULT_TOP_N
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Relevancy-filter retrieved documents before prompting.
    #[serde(default)]
    pub selective: bool,
    /// Include the answer choices in the KB query.
    #[serde(default)]
    pub query_with_choices: bool,
    #[serde(default = "default_n")]
    pub n: usize,
}

impl StrategyConfig {
    pub fn vanilla() -> Self {
        StrategyConfig {
            kind: StrategyKind::Vanilla,
            selective: false,
            query_with_choices: false,
            n: DEFAULT_TOP_N,
        }
    }

    pub fn search_grounded() -> Self {
        StrategyConfig {
            kind: StrategyKind::SearchGrounded,
            ..Self::vanilla()
        }
    }

    pub fn kb(selective: bool, query_with_choices: bool) -> Self {
        StrategyConfig {
            kind: StrategyKind::KbGrounded,
            selective,
            query_with_choices,
            n: DEFAULT_TOP_N,
        }
    }

    /// Stable name used in run logs and reports, e.g. `kb_selective_choices`.
    pub fn name(&self) -> String {
        let base = match self.kind {
            StrategyKind::Vanilla => return "vanilla".into(),
            StrategyKind::SearchGrounded => return "search_grounded".into(),
            StrategyKind::KbGrounded if self.selective => "kb_selective",
            StrategyKind::KbGrounded => "kb_nonselective",
        };
        let mut name = base.to_owned();
        if self.query_with_choices {
            name.push_str("_choices");
        }
        if self.n != DEFAULT_TOP_N {
            name.push_str(&format!("_n{}", self.n));
        }
        name
    }

    pub fn validate(&self) -> Result<(), RagError> {
        if self.n == 0 {
            return Err(RagError::InvalidStrategy("n must be at least 1".into()));
        }
        if self.kind != StrategyKind::KbGrounded && (self.selective || self.query_with_choices) {
            return Err(RagError::InvalidStrategy(format!(
                "selective and query_with_choices apply only to KB grounding, not {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn validate_for(&self, task: TaskKind) -> Result<(), RagError> {
        self.validate()?;
        if self.query_with_choices && !task.supports_choice_query() {
            return Err(RagError::InvalidStrategy(format!(
                "{task} queries cannot include choices"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for StrategyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for StrategyConfig {
    type Err = RagError;

    /// Parses the names produced by [`StrategyConfig::name`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RagError::InvalidStrategy(format!("unknown strategy {s:?}"));
        match s {
            "vanilla" => return Ok(Self::vanilla()),
            "search_grounded" => return Ok(Self::search_grounded()),
            _ => {}
        }
        let (selective, mut rest) = if let Some(r) = s.strip_prefix("kb_selective") {
            (true, r)
        } else if let Some(r) = s.strip_prefix("kb_nonselective") {
            (false, r)
        } else {
            return Err(bad());
        };
        let mut cfg = Self::kb(selective, false);
        if let Some(r) = rest.strip_prefix("_choices") {
            cfg.query_with_choices = true;
            rest = r;
        }
        if let Some(r) = rest.strip_prefix("_n") {
            cfg.n = r.parse().map_err(|_| bad())?;
            rest = "";
        }
        if !rest.is_empty() {
            return Err(bad());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc: Document,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevancyVerdict {
    pub doc_id: String,
    pub relevant: bool,
    pub raw: String,
    /// False when the verdict could not be parsed and defaulted to not relevant.
    pub parsed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RagTrace {
    pub template_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default)]
    pub hits: Vec<RetrievalHit>,
    #[serde(default)]
    pub relevancy: Vec<RelevancyVerdict>,
    #[serde(default)]
    pub kept: Vec<Document>,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<Vec<Citation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding_metadata: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RagTrace {
    pub fn k(&self) -> usize {
        self.kept.len()
    }
}

/// A failed pipeline run together with everything recorded before the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct TraceFailure {
    pub trace: Box<RagTrace>,
    #[source]
    pub error: RagError,
}

fn check_task(task: TaskKind, item: &BenchmarkItem) -> Result<(), RagError> {
    if item.task != task {
        return Err(RagError::TaskMismatch {
            item: item.id.clone(),
            expected: task,
            found: item.task,
        });
    }
    Ok(())
}

fn value_of(item: &BenchmarkItem) -> &str {
    item.value.as_deref().unwrap_or("")
}

/// The KB retrieval query for an item. Template-based; no model call.
pub fn rewrite_query(task: TaskKind, item: &BenchmarkItem, with_choices: bool) -> Result<String, RagError> {
    check_task(task, item)?;
    if with_choices && !task.supports_choice_query() {
        return Err(RagError::InvalidStrategy(format!(
            "{task} queries cannot include choices"
        )));
    }
    let choices = templates::choice_block(task, &item.choices);
    Ok(match task {
        TaskKind::BlendMc if with_choices => {
            templates::BLEND_QUERY_CHOICES.render(&[("question", &item.question), ("choices", &choices)])?
        }
        TaskKind::StereotypeAvoidance if with_choices => {
            templates::STEREOTYPE_QUERY_CHOICES.render(&[("question", &item.question), ("choices", &choices)])?
        }
        TaskKind::BlendMc | TaskKind::StereotypeAvoidance => item.question.clone(),
        TaskKind::NormadCountry | TaskKind::NormadCountryValue => {
            let country = templates::display_country(&item.country);
            let question = templates::continue_sentence(&item.question);
            if task == TaskKind::NormadCountryValue {
                let value = templates::lower_first(value_of(item));
                templates::NORMAD_QUERY_VALUE.render(&[
                    ("country", &country),
                    ("question", &question),
                    ("value", &value),
                ])?
            } else {
                templates::NORMAD_QUERY_COUNTRY.render(&[("country", &country), ("question", &question)])?
            }
        }
        TaskKind::OpenEnded => item.kb_query.clone().unwrap_or_else(|| item.question.clone()),
    })
}

/// The relevancy-check prompt for one retrieved document. Multiple-choice
/// tasks always show the choices, whatever the KB query looked like.
pub fn relevancy_prompt(task: TaskKind, item: &BenchmarkItem, doc_text: &str) -> Result<String, RagError> {
    check_task(task, item)?;
    let choices = templates::choice_block(task, &item.choices);
    let vars_mc = [
        ("question", item.question.as_str()),
        ("choices", &choices),
        ("text", doc_text),
    ];
    Ok(match task {
        TaskKind::BlendMc => templates::BLEND_RELEVANCY.render(&vars_mc)?,
        TaskKind::StereotypeAvoidance => templates::STEREOTYPE_RELEVANCY.render(&vars_mc)?,
        TaskKind::NormadCountry | TaskKind::NormadCountryValue => {
            let query = rewrite_query(task, item, false)?;
            templates::NORMAD_RELEVANCY.render(&[("query", &query), ("text", doc_text)])?
        }
        TaskKind::OpenEnded => {
            templates::OPEN_ENDED_RELEVANCY.render(&[("question", &item.question), ("text", doc_text)])?
        }
    })
}

/// Reads a Yes/No relevancy verdict; `None` when it says neither or both.
pub fn parse_verdict(raw: &str) -> Option<bool> {
    let options = [Choice::new("1", "Yes"), Choice::new("2", "No")];
    match verbalizer::normalize(TaskKind::NormadCountry, raw, &options).kind {
        AnswerKind::Choice(l) => Some(l == "1"),
        _ => None,
    }
}

/// The final prompt. With no kept documents this is the task's original
/// prompt, never an empty supporting-text block.
pub fn build_prompt(task: TaskKind, item: &BenchmarkItem, kept: &[Document]) -> Result<String, RagError> {
    check_task(task, item)?;
    let choices = templates::choice_block(task, &item.choices);
    let documents = templates::document_block(kept.iter().map(|d| d.text.as_str()));
    let rule = value_of(item);
    let vars = [
        ("question", item.question.as_str()),
        ("choices", choices.as_str()),
        ("documents", documents.as_str()),
        ("country", item.country.as_str()),
        ("rule", rule),
    ];
    let template = match (task, kept.is_empty()) {
        (TaskKind::BlendMc, true) => templates::BLEND_ORIGINAL,
        (TaskKind::BlendMc, false) => templates::BLEND_RAG,
        (TaskKind::NormadCountry, true) => templates::NORMAD_COUNTRY_ORIGINAL,
        (TaskKind::NormadCountry, false) => templates::NORMAD_COUNTRY_RAG,
        (TaskKind::NormadCountryValue, true) => templates::NORMAD_VALUE_ORIGINAL,
        (TaskKind::NormadCountryValue, false) => templates::NORMAD_VALUE_RAG,
        (TaskKind::StereotypeAvoidance, true) => templates::STEREOTYPE_ORIGINAL,
        (TaskKind::StereotypeAvoidance, false) => templates::STEREOTYPE_RAG,
        (TaskKind::OpenEnded, true) => templates::OPEN_ENDED_ORIGINAL,
        (TaskKind::OpenEnded, false) => templates::OPEN_ENDED_RAG,
    };
    Ok(template.render(&vars)?)
}

/// Embedder, index and the documents the index ids point at.
pub struct KnowledgeBase {
    embedder: Arc<dyn Embedder>,
    index: VectorIndex,
    documents: HashMap<String, Document>,
}

impl KnowledgeBase {
    /// Embeds every document and builds the index.
    pub fn build(embedder: Arc<dyn Embedder>, documents: Vec<Document>) -> Result<Self, RagError> {
        let embeddings: Vec<Embedding> = documents
            .par_iter()
            .map(|d| embedder.embed(&d.text))
            .collect::<Result<_, _>>()?;
        let mut builder = IndexBuilder::new(embedder.dim())?;
        for (doc, emb) in documents.iter().zip(&embeddings) {
            builder.add(doc.id.clone(), emb)?;
        }
        let index = builder.build();
        Self::from_parts(embedder, index, documents)
    }

    pub fn from_parts(
        embedder: Arc<dyn Embedder>,
        index: VectorIndex,
        documents: Vec<Document>,
    ) -> Result<Self, RagError> {
        if embedder.dim() != index.dim() {
            return Err(IndexError::DimensionMismatch {
                expected: index.dim(),
                found: embedder.dim(),
            }
            .into());
        }
        let documents: HashMap<String, Document> = documents.into_iter().map(|d| (d.id.clone(), d)).collect();
        if let Some(missing) = index.ids().iter().find(|id| !documents.contains_key(*id)) {
            return Err(RagError::UnknownDocument(missing.clone()));
        }
        Ok(KnowledgeBase {
            embedder,
            index,
            documents,
        })
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.get(id)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn retrieve(&self, query: &str, n: usize) -> Result<Vec<RetrievalHit>, RagError> {
        let q = self.embedder.embed(query)?;
        self.index
            .top_n(&q, n)?
            .into_iter()
            .map(|nb| {
                let doc = self
                    .documents
                    .get(&nb.id)
                    .cloned()
                    .ok_or_else(|| RagError::UnknownDocument(nb.id.clone()))?;
                Ok(RetrievalHit {
                    doc,
                    score: nb.score,
                    rank: nb.rank,
                })
            })
            .collect()
    }
}

/// Runs one strategy for one item. The same backend answers relevancy
/// checks and the final question.
pub struct RagEngine<'a> {
    gateway: &'a Gateway,
    backend: String,
    kb: Option<&'a KnowledgeBase>,
    temperature: f64,
}

impl<'a> RagEngine<'a> {
    pub fn new(gateway: &'a Gateway, backend: impl Into<String>) -> Self {
        RagEngine {
            gateway,
            backend: backend.into(),
            kb: None,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_kb(mut self, kb: &'a KnowledgeBase) -> Self {
        self.kb = Some(kb);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn has_kb(&self) -> bool {
        self.kb.is_some()
    }

    fn request(&self, prompt: &str, sample: u32) -> GenerationRequest {
        GenerationRequest::new(self.backend.clone(), prompt)
            .with_temperature(self.temperature)
            .with_sample(sample)
    }

    pub fn relevancy_check(
        &self,
        task: TaskKind,
        item: &BenchmarkItem,
        doc: &Document,
    ) -> Result<RelevancyVerdict, RagError> {
        let prompt = relevancy_prompt(task, item, &doc.text)?;
        let raw = self.gateway.generate(&self.request(&prompt, 0))?.text;
        let verdict = parse_verdict(&raw);
        Ok(RelevancyVerdict {
            doc_id: doc.id.clone(),
            relevant: verdict.unwrap_or(false),
            raw,
            parsed: verdict.is_some(),
        })
    }

    pub fn answer(&self, item: &BenchmarkItem, strategy: &StrategyConfig) -> Result<RagTrace, TraceFailure> {
        self.answer_sample(item, strategy, 0)
    }

    /// Like [`answer`](Self::answer), tagging the final generation call with
    /// a sample index so repeated samples replay independently.
    pub fn answer_sample(
        &self,
        item: &BenchmarkItem,
        strategy: &StrategyConfig,
        sample: u32,
    ) -> Result<RagTrace, TraceFailure> {
        let mut trace = RagTrace {
            template_version: TEMPLATE_VERSION,
            ..RagTrace::default()
        };
        match self.run(item, strategy, sample, &mut trace) {
            Ok(()) => Ok(trace),
            Err(error) => {
                trace.error = Some(error.to_string());
                Err(TraceFailure {
                    trace: Box::new(trace),
                    error,
                })
            }
        }
    }

    fn run(
        &self,
        item: &BenchmarkItem,
        strategy: &StrategyConfig,
        sample: u32,
        trace: &mut RagTrace,
    ) -> Result<(), RagError> {
        let task = item.task;
        strategy.validate_for(task)?;
        match strategy.kind {
            StrategyKind::Vanilla => {
                trace.prompt = build_prompt(task, item, &[])?;
                let r = self.gateway.generate(&self.request(&trace.prompt, sample))?;
                trace.raw_answer = Some(r.text);
            }
            StrategyKind::SearchGrounded => {
                trace.prompt = build_prompt(task, item, &[])?;
                let r = self
                    .gateway
                    .generate_search_grounded(&self.request(&trace.prompt, sample))?;
                trace.raw_answer = Some(r.text);
                trace.grounding = Some(r.grounding.unwrap_or_default());
                trace.grounding_metadata = r.grounding_metadata;
            }
            StrategyKind::KbGrounded => {
                let kb = self.kb.ok_or(RagError::MissingKnowledgeBase)?;
                let query = rewrite_query(task, item, strategy.query_with_choices)?;
                trace.query = Some(query.clone());
                trace.hits = kb.retrieve(&query, strategy.n)?;
                if strategy.selective {
                    for hit in &trace.hits {
                        let verdict = self.relevancy_check(task, item, &hit.doc)?;
                        if !verdict.parsed {
                            trace.warnings.push(format!(
                                "unparseable relevancy verdict for {}: {:?}",
                                hit.doc.id, verdict.raw
                            ));
                        }
                        trace.relevancy.push(verdict);
                    }
                    trace.kept = trace
                        .hits
                        .iter()
                        .zip(&trace.relevancy)
                        .filter(|(_, v)| v.relevant)
                        .map(|(h, _)| h.doc.clone())
                        .collect();
                } else {
                    trace.kept = trace.hits.iter().map(|h| h.doc.clone()).collect();
                }
                trace.prompt = build_prompt(task, item, &trace.kept)?;
                let r = self.gateway.generate(&self.request(&trace.prompt, sample))?;
                trace.raw_answer = Some(r.text);
            }
        }
        Ok(())
    }
}
