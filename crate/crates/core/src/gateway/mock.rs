use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{fingerprint, Backend, Citation, GatewayError, GenerationRequest, GenerationResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citations: Option<Vec<Citation>>,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptedReply {
            text: text.into(),
            citations: None,
        }
    }
}

type Responder = Arc<dyn Fn(&str) -> Option<String> + Send + Sync>;

/// Deterministic backend answering from a script.
///
/// Lookup order: exact prompt fingerprint, then the responder closure (if
/// any), then `contains` rules in insertion order, then the default reply.
/// Without a default the mock is strict and unmatched prompts are errors.
#[derive(Clone)]
pub struct ScriptedBackend {
    id: String,
    grounding: bool,
    exact: HashMap<String, ScriptedReply>,
    responder: Option<Responder>,
    rules: Vec<(String, ScriptedReply)>,
    default: Option<ScriptedReply>,
}

/// One line of a mock script file.
///
/// Exactly one of `prompt`, `fingerprint`, `contains` or `default` selects
/// what the line matches.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default)]
    pub default: bool,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citations: Option<Vec<Citation>>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>) -> Self {
        ScriptedBackend {
            id: id.into(),
            grounding: false,
            exact: HashMap::new(),
            responder: None,
            rules: Vec::new(),
            default: None,
        }
    }

    /// Advertises search grounding; replies carry their scripted citations.
    pub fn grounded(mut self) -> Self {
        self.grounding = true;
        self
    }

    pub fn script(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.exact.insert(fingerprint(prompt), ScriptedReply::text(reply));
        self
    }

    pub fn script_reply(mut self, prompt: &str, reply: ScriptedReply) -> Self {
        self.exact.insert(fingerprint(prompt), reply);
        self
    }

    pub fn rule(mut self, contains: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push((contains.into(), ScriptedReply::text(reply)));
        self
    }

    pub fn responder(mut self, f: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.responder = Some(Arc::new(f));
        self
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default = Some(ScriptedReply::text(reply));
        self
    }

    pub fn is_strict(&self) -> bool {
        self.default.is_none()
    }

    pub fn from_entries(
        id: impl Into<String>,
        entries: impl IntoIterator<Item = ScriptEntry>,
    ) -> Result<Self, GatewayError> {
        let mut backend = ScriptedBackend::new(id);
        for (i, entry) in entries.into_iter().enumerate() {
            let reply = ScriptedReply {
                text: entry.response,
                citations: entry.citations,
            };
            let selectors = entry.prompt.is_some() as u8
                + entry.fingerprint.is_some() as u8
                + entry.contains.is_some() as u8
                + entry.default as u8;
            if selectors != 1 {
                return Err(GatewayError::InvalidRequest(format!(
                    "script entry {}: exactly one of prompt/fingerprint/contains/default required",
                    i + 1
                )));
            }
            if let Some(p) = entry.prompt {
                backend.exact.insert(fingerprint(&p), reply);
            } else if let Some(f) = entry.fingerprint {
                backend.exact.insert(f, reply);
            } else if let Some(c) = entry.contains {
                backend.rules.push((c, reply));
            } else {
                backend.default = Some(reply);
            }
        }
        Ok(backend)
    }

    pub fn from_script_file(id: impl Into<String>, path: &Path) -> Result<Self, GatewayError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Decode(format!("{} line {}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        Self::from_entries(id, entries)
    }

    fn lookup(&self, prompt: &str) -> Result<ScriptedReply, GatewayError> {
        let fp = fingerprint(prompt);
        if let Some(r) = self.exact.get(&fp) {
            return Ok(r.clone());
        }
        if let Some(text) = self.responder.as_ref().and_then(|f| f(prompt)) {
            return Ok(ScriptedReply::text(text));
        }
        if let Some((_, r)) = self.rules.iter().find(|(c, _)| prompt.contains(c.as_str())) {
            return Ok(r.clone());
        }
        self.default.clone().ok_or(GatewayError::Unscripted { fingerprint: fp })
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_grounding(&self) -> bool {
        self.grounding
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let reply = self.lookup(&req.prompt)?;
        Ok(GenerationResponse {
            text: reply.text,
            grounding: None,
            grounding_metadata: None,
            backend: self.id.clone(),
            latency_ms: 0,
        })
    }

    fn generate_search_grounded(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        if !self.grounding {
            return Err(GatewayError::GroundingUnsupported(self.id.clone()));
        }
        let reply = self.lookup(&req.prompt)?;
        Ok(GenerationResponse {
            text: reply.text,
            grounding: Some(reply.citations.unwrap_or_default()),
            grounding_metadata: None,
            backend: self.id.clone(),
            latency_ms: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> GenerationRequest {
        GenerationRequest::new("mock", prompt)
    }

    #[test]
    fn scripted_prompt_answers() {
        let mock = ScriptedBackend::new("mock").script("Question P", "Answer: A");
        assert_eq!(mock.generate(&req("Question P")).unwrap().text, "Answer: A");
        // template-equivalent whitespace hits the same entry
        assert_eq!(mock.generate(&req("Question   P\n")).unwrap().text, "Answer: A");
    }

    #[test]
    fn repeated_requests_are_identical() {
        let mock = ScriptedBackend::new("mock").with_default("x");
        let a = serde_json::to_vec(&mock.generate(&req("p")).unwrap()).unwrap();
        let b = serde_json::to_vec(&mock.generate(&req("p")).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strict_mode_rejects_unscripted() {
        let mock = ScriptedBackend::new("mock").script("known", "y");
        assert!(mock.is_strict());
        let err = mock.generate(&req("unknown")).unwrap_err();
        assert!(
            matches!(err, GatewayError::Unscripted { fingerprint } if fingerprint == super::fingerprint("unknown"))
        );
    }

    #[test]
    fn lookup_precedence() {
        let mock = ScriptedBackend::new("mock")
            .script("exact prompt about fruit", "exact")
            .responder(|p| p.contains("responder").then(|| "fn".to_owned()))
            .rule("fruit", "rule")
            .with_default("default");
        assert_eq!(mock.generate(&req("exact prompt about fruit")).unwrap().text, "exact");
        assert_eq!(mock.generate(&req("responder fruit")).unwrap().text, "fn");
        assert_eq!(mock.generate(&req("any fruit")).unwrap().text, "rule");
        assert_eq!(mock.generate(&req("other")).unwrap().text, "default");
    }

    #[test]
    fn grounded_reply_carries_citations() {
        let citations = vec![
            Citation {
                uri: "https://a.example".into(),
                title: Some("A".into()),
                span: Some((0, 5)),
                snippet: None,
            },
            Citation {
                uri: "https://b.example".into(),
                title: None,
                span: None,
                snippet: Some("b".into()),
            },
        ];
        let mock = ScriptedBackend::new("g").grounded().script_reply(
            "p",
            ScriptedReply {
                text: "grounded".into(),
                citations: Some(citations.clone()),
            },
        );
        let r = mock.generate_search_grounded(&req("p")).unwrap();
        assert_eq!(r.grounding.unwrap(), citations);
        assert!(mock.generate(&req("p")).unwrap().grounding.is_none());
    }

    #[test]
    fn ungrounded_backend_refuses() {
        let mock = ScriptedBackend::new("plain").with_default("x");
        assert!(matches!(
            mock.generate_search_grounded(&req("p")),
            Err(GatewayError::GroundingUnsupported(_))
        ));
    }

    #[test]
    fn script_file_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"prompt\": \"hello\", \"response\": \"world\"}\n",
                "{\"contains\": \"Options:\", \"response\": \"1) Yes\"}\n",
                "{\"default\": true, \"response\": \"(?)\"}\n",
            ),
        )
        .unwrap();
        let mock = ScriptedBackend::from_script_file("m", &path).unwrap();
        assert_eq!(mock.generate(&req("hello")).unwrap().text, "world");
        assert_eq!(mock.generate(&req("x Options: y")).unwrap().text, "1) Yes");
        assert_eq!(mock.generate(&req("zzz")).unwrap().text, "(?)");

        std::fs::write(&path, "{\"prompt\": \"a\", \"contains\": \"b\", \"response\": \"c\"}\n").unwrap();
        assert!(ScriptedBackend::from_script_file("m", &path).is_err());
    }
}
