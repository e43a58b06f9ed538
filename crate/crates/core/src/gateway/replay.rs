//! Record/replay of backend exchanges.
//!
//! Fixture files are JSON lines of [`FixtureRecord`]; the gateway call log
//! uses the same format, so any logged run can be replayed offline.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, GatewayError, GenerationRequest, GenerationResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub fingerprint: String,
    #[serde(default)]
    pub grounded: bool,
    pub request: GenerationRequest,
    pub response: GenerationResponse,
}

pub fn read_fixture(path: &Path) -> Result<Vec<FixtureRecord>, GatewayError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| GatewayError::Decode(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Serves recorded responses keyed by (prompt fingerprint, grounded, sample).
pub struct ReplayBackend {
    id: String,
    grounding: bool,
    records: HashMap<(String, bool, u32), GenerationResponse>,
}

impl ReplayBackend {
    pub fn from_records(id: impl Into<String>, records: Vec<FixtureRecord>) -> Self {
        let grounding = records.iter().any(|r| r.grounded);
        let records = records
            .into_iter()
            .map(|r| ((r.fingerprint, r.grounded, r.request.sample), r.response))
            .collect();
        ReplayBackend {
            id: id.into(),
            grounding,
            records,
        }
    }

    pub fn from_file(id: impl Into<String>, path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_records(id, read_fixture(path)?))
    }

    /// Forces grounding support on even if the fixture holds no grounded calls.
    pub fn grounded(mut self) -> Self {
        self.grounding = true;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn lookup(&self, req: &GenerationRequest, grounded: bool) -> Result<GenerationResponse, GatewayError> {
        let fingerprint = req.fingerprint();
        self.records
            .get(&(fingerprint.clone(), grounded, req.sample))
            .cloned()
            .ok_or(GatewayError::Unscripted { fingerprint })
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_grounding(&self) -> bool {
        self.grounding
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        self.lookup(req, false)
    }

    fn generate_search_grounded(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        if !self.grounding {
            return Err(GatewayError::GroundingUnsupported(self.id.clone()));
        }
        self.lookup(req, true)
    }
}

/// Wraps a live backend and appends each successful exchange to a fixture.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    out: Mutex<BufWriter<File>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, fixture: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(fixture)?;
        Ok(RecordingBackend {
            inner,
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    fn record(
        &self,
        req: &GenerationRequest,
        grounded: bool,
        response: &GenerationResponse,
    ) -> Result<(), GatewayError> {
        let record = FixtureRecord {
            fingerprint: req.fingerprint(),
            grounded,
            request: req.clone(),
            response: response.clone(),
        };
        let mut out = self.out.lock().expect("fixture writer poisoned");
        serde_json::to_writer(&mut *out, &record).map_err(|e| GatewayError::Decode(e.to_string()))?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }
}

impl Backend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn supports_grounding(&self) -> bool {
        self.inner.supports_grounding()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let r = self.inner.generate(req)?;
        self.record(req, false, &r)?;
        Ok(r)
    }

    fn generate_search_grounded(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let r = self.inner.generate_search_grounded(req)?;
        self.record(req, true, &r)?;
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Citation, ScriptedBackend, ScriptedReply};

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.jsonl");
        let live = ScriptedBackend::new("live")
            .grounded()
            .script_reply(
                "search me",
                ScriptedReply {
                    text: "found".into(),
                    citations: Some(vec![Citation {
                        uri: "https://x.example".into(),
                        title: None,
                        span: Some((0, 5)),
                        snippet: None,
                    }]),
                },
            )
            .script("plain", "answer");
        let rec = RecordingBackend::new(Arc::new(live), &path).unwrap();
        let g = rec
            .generate_search_grounded(&GenerationRequest::new("live", "search me"))
            .unwrap();
        let p = rec.generate(&GenerationRequest::new("live", "plain")).unwrap();
        drop(rec);

        let replay = ReplayBackend::from_file("live", &path).unwrap();
        assert_eq!(replay.len(), 2);
        assert!(replay.supports_grounding());
        assert_eq!(
            replay
                .generate_search_grounded(&GenerationRequest::new("live", "search me"))
                .unwrap(),
            g
        );
        assert_eq!(replay.generate(&GenerationRequest::new("live", "plain")).unwrap(), p);
        // grounded and plain calls are keyed separately
        assert!(matches!(
            replay.generate(&GenerationRequest::new("live", "search me")),
            Err(GatewayError::Unscripted { .. })
        ));
    }
}
