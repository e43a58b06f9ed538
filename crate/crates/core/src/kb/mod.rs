//! Knowledge-base construction.
//!
//! The KB merges four cultural sources into one corpus of [`Document`]s:
//!
//! | source       | record payload                        | rendered text                         |
//! |--------------|---------------------------------------|---------------------------------------|
//! | CultureAtlas | `{"summary": ..}`                     | the summary, verbatim                 |
//! | Cube         | `{"name", "country", "domain"}`       | one of three domain templates         |
//! | CultureBank  | `{"eval_whole_desc": .., ...}`        | `eval_whole_desc`, verbatim           |
//! | SeeGULL      | `{"identity", "attribute"}`           | `One stereotype of <identity> is <attribute>.` |
//!
//! Source files are JSON lines, one payload per line. Documents are
//! deduplicated per source on their rendered text (trailing whitespace
//! ignored) and identified by a content hash of `(source, payload)`, so
//! re-ingesting the same inputs always yields the same ids.

mod demonyms;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use demonyms::known_countries;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("unknown country {0:?}: no adjective form available")]
    UnknownCountry(String),
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("{origin} record {index}: {message}")]
    MalformedRecord {
        origin: Source,
        index: usize,
        message: String,
    },
    #[error("{path}: {error}")]
    File { path: String, error: Box<KbError> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    CultureAtlas,
    Cube,
    CultureBank,
    #[serde(rename = "seegull")]
    SeeGull,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::CultureAtlas, Source::Cube, Source::CultureBank, Source::SeeGull];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::CultureAtlas => "culture_atlas",
            Source::Cube => "cube",
            Source::CultureBank => "culture_bank",
            Source::SeeGull => "seegull",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::CultureAtlas => "CultureAtlas",
            Source::Cube => "Cube",
            Source::CultureBank => "CultureBank",
            Source::SeeGull => "SeeGULL",
        })
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s || src.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown source {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CubeDomain {
    Landmark,
    Art,
    Cuisine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureAtlasRecord {
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeRecord {
    pub name: String,
    pub country: String,
    pub domain: CubeDomain,
}

/// A CultureBank descriptor. Only `eval_whole_desc` is rendered; the other
/// descriptor fields (cultural group, context, actor, ...) are carried as
/// metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureBankRecord {
    pub eval_whole_desc: String,
    #[serde(flatten)]
    pub descriptor: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeeGullRecord {
    pub identity: String,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceRecord {
    CultureAtlas(CultureAtlasRecord),
    Cube(CubeRecord),
    CultureBank(CultureBankRecord),
    SeeGull(SeeGullRecord),
}

impl SourceRecord {
    pub fn source(&self) -> Source {
        match self {
            SourceRecord::CultureAtlas(_) => Source::CultureAtlas,
            SourceRecord::Cube(_) => Source::Cube,
            SourceRecord::CultureBank(_) => Source::CultureBank,
            SourceRecord::SeeGull(_) => Source::SeeGull,
        }
    }

    /// Parses one payload of the given source.
    pub fn from_payload(source: Source, payload: Value) -> Result<Self, serde_json::Error> {
        Ok(match source {
            Source::CultureAtlas => SourceRecord::CultureAtlas(serde_json::from_value(payload)?),
            Source::Cube => SourceRecord::Cube(serde_json::from_value(payload)?),
            Source::CultureBank => SourceRecord::CultureBank(serde_json::from_value(payload)?),
            Source::SeeGull => SourceRecord::SeeGull(serde_json::from_value(payload)?),
        })
    }

    pub fn payload(&self) -> Value {
        let value = match self {
            SourceRecord::CultureAtlas(r) => serde_json::to_value(r),
            SourceRecord::Cube(r) => serde_json::to_value(r),
            SourceRecord::CultureBank(r) => serde_json::to_value(r),
            SourceRecord::SeeGull(r) => serde_json::to_value(r),
        };
        value.expect("payload types serialize to JSON")
    }

    pub fn render(&self) -> Result<String, KbError> {
        match self {
            SourceRecord::CultureAtlas(r) => non_empty(&r.summary, "summary").map(str::to_owned),
            SourceRecord::Cube(r) => render_cube(&r.name, &r.country, r.domain),
            SourceRecord::CultureBank(r) => non_empty(&r.eval_whole_desc, "eval_whole_desc").map(str::to_owned),
            SourceRecord::SeeGull(r) => render_seegull(&r.identity, &r.attribute),
        }
    }
}

fn non_empty<'a>(value: &'a str, field: &'static str) -> Result<&'a str, KbError> {
    if value.trim().is_empty() {
        Err(KbError::EmptyField(field))
    } else {
        Ok(value)
    }
}

/// Adjectival form of a country name, e.g. `France` -> `French`.
pub fn country_to_adjective(country: &str) -> Result<&'static str, KbError> {
    demonyms::lookup(country).ok_or_else(|| KbError::UnknownCountry(country.to_owned()))
}

pub fn render_cube(name: &str, country: &str, domain: CubeDomain) -> Result<String, KbError> {
    let name = non_empty(name, "name")?;
    let country = non_empty(country, "country")?;
    Ok(match domain {
        CubeDomain::Landmark => format!("{name} is a place in {country}."),
        CubeDomain::Art => format!("{name} is an art concept in {country}."),
        CubeDomain::Cuisine => {
            let adjective = country_to_adjective(country)?;
            format!("{name} is from {adjective} cuisine.")
        }
    })
}

pub fn render_seegull(identity: &str, attribute: &str) -> Result<String, KbError> {
    let identity = non_empty(identity, "identity")?;
    let attribute = non_empty(attribute, "attribute")?;
    Ok(format!("One stereotype of {identity} is {attribute}."))
}

/// One KB entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: Source,
    /// The original source payload.
    pub meta: Value,
}

impl Document {
    pub fn from_record(record: &SourceRecord) -> Result<Self, KbError> {
        let text = record.render()?;
        let meta = record.payload();
        Ok(Document {
            id: document_id(record.source(), &meta),
            text,
            source: record.source(),
            meta,
        })
    }

    /// Recovers the source record this document was rendered from.
    pub fn to_record(&self) -> Result<SourceRecord, serde_json::Error> {
        SourceRecord::from_payload(self.source, self.meta.clone())
    }

    /// `(identity, attribute)` for SeeGULL documents.
    pub fn stereotype(&self) -> Option<(&str, &str)> {
        if self.source != Source::SeeGull {
            return None;
        }
        let identity = self.meta.get("identity")?.as_str()?;
        let attribute = self.meta.get("attribute")?.as_str()?;
        Some((identity, attribute))
    }
}

/// Content hash of `(source, canonical payload)`; 16 hex chars.
fn document_id(source: Source, payload: &Value) -> String {
    // serde_json maps are key-sorted, so this serialization is canonical.
    let canonical = serde_json::to_string(payload).expect("JSON values serialize");
    let mut hasher = Sha256::new();
    hasher.update(source.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(canonical.as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub records: usize,
    pub documents: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub per_source: BTreeMap<Source, SourceCounts>,
    pub total_documents: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub report: IngestReport,
}

/// Renders and deduplicates a stream of records.
///
/// Rendering runs in parallel; the merge keeps input order, so the first
/// occurrence of a duplicate wins. Errors carry the record's position in
/// the stream.
pub fn ingest<I>(records: I) -> Result<Corpus, KbError>
where
    I: IntoIterator<Item = SourceRecord>,
{
    let records: Vec<SourceRecord> = records.into_iter().collect();
    let rendered: Vec<Result<Document, KbError>> = records.par_iter().map(Document::from_record).collect();

    let mut seen: HashSet<(Source, String)> = HashSet::new();
    let mut report = IngestReport::default();
    let mut documents = Vec::with_capacity(records.len());
    for (index, (record, doc)) in records.iter().zip(rendered).enumerate() {
        let doc = doc.map_err(|e| KbError::MalformedRecord {
            origin: record.source(),
            index,
            message: e.to_string(),
        })?;
        let counts = report.per_source.entry(doc.source).or_default();
        counts.records += 1;
        if seen.insert((doc.source, doc.text.trim_end().to_owned())) {
            counts.documents += 1;
            documents.push(doc);
        } else {
            counts.duplicates += 1;
        }
    }
    report.total_documents = documents.len();
    Ok(Corpus { documents, report })
}

/// Reads a per-source JSON-lines file. Blank lines are skipped; errors
/// report the 1-based line number.
pub fn read_source_file(source: Source, path: &Path) -> Result<Vec<SourceRecord>, KbError> {
    let wrap = |error: KbError| KbError::File {
        path: path.display().to_string(),
        error: Box::new(error),
    };
    let file = File::open(path).map_err(|e| wrap(e.into()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| wrap(e.into()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str::<Value>(&line)
            .and_then(|payload| SourceRecord::from_payload(source, payload))
            .map_err(|e| {
                wrap(KbError::MalformedRecord {
                    origin: source,
                    index: i + 1,
                    message: e.to_string(),
                })
            })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut out: W, documents: &[Document]) -> std::io::Result<()> {
    for doc in documents {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>, KbError> {
    let file = File::open(path).map_err(|e| KbError::File {
        path: path.display().to_string(),
        error: Box::new(e.into()),
    })?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| KbError::File {
            path: path.display().to_string(),
            error: Box::new(KbError::MalformedRecord {
                origin: Source::CultureAtlas,
                index: i + 1,
                message: format!("not a corpus document: {e}"),
            }),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}
