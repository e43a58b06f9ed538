//! Run configuration file and the objects built from it.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use culturag_core::fixture;
use culturag_core::gateway::{
    Backend, ChatCompletionBackend, ChatCompletionConfig, Gateway, RateLimiter, RecordingBackend, ReplayBackend,
    RetryPolicy, ScriptedBackend, VertexGeminiBackend, VertexGeminiConfig, DEFAULT_TEMPERATURE,
};
use culturag_core::index::{Embedder, MockEmbedder, RemoteEmbedder, RemoteEmbedderConfig, VectorIndex, MOCK_DIM};
use culturag_core::kb;
use culturag_core::rag::{KnowledgeBase, StrategyConfig};
use culturag_core::task::TaskKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Call backends directly.
    #[default]
    Live,
    /// Call backends and append every exchange to `<fixtures_dir>/<id>.jsonl`.
    Record,
    /// Answer only from `<fixtures_dir>/<id>.jsonl`.
    Replay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub task: TaskKind,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategyEntry {
    Name(String),
    Full(StrategyConfig),
}

impl StrategyEntry {
    pub fn resolve(&self) -> Result<StrategyConfig> {
        let cfg = match self {
            StrategyEntry::Name(name) => name.parse::<StrategyConfig>().map_err(anyhow::Error::msg)?,
            StrategyEntry::Full(cfg) => cfg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Mock {
        #[serde(default)]
        seed: u64,
        #[serde(default = "mock_dim")]
        dim: usize,
    },
    Remote(RemoteEmbedderConfig),
}

fn mock_dim() -> usize {
    MOCK_DIM
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Mock { seed: 0, dim: MOCK_DIM }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Arc<dyn Embedder>> {
        Ok(match self {
            EmbedderConfig::Mock { seed, dim } => Arc::new(MockEmbedder::with_dim(*dim, *seed)),
            EmbedderConfig::Remote(cfg) => Arc::new(RemoteEmbedder::new(cfg.clone())?),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        reject_inline_secrets(&text, path)?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible chat completions.
    Chat(ChatCompletionConfig),
    /// Gemini on Vertex AI, with optional search grounding.
    Vertex(VertexGeminiConfig),
    /// Scripted responses from a JSON-lines script file.
    Mock {
        id: String,
        script: PathBuf,
        #[serde(default)]
        grounded: bool,
    },
    /// The built-in fixture model (id `fixture`).
    Fixture,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

fn default_concurrency() -> usize {
    4
}

impl BackendConfig {
    pub fn id(&self) -> &str {
        match &self.kind {
            BackendKind::Chat(c) => &c.id,
            BackendKind::Vertex(c) => &c.id,
            BackendKind::Mock { id, .. } => id,
            BackendKind::Fixture => fixture::BACKEND,
        }
    }

    fn limiter(&self) -> RateLimiter {
        match self.requests_per_minute {
            Some(rpm) => RateLimiter::per_minute(self.max_concurrent, rpm),
            None => RateLimiter::new(self.max_concurrent, Duration::ZERO),
        }
    }

    fn live(&self, base: &Path) -> Result<Arc<dyn Backend>> {
        Ok(match &self.kind {
            BackendKind::Chat(c) => Arc::new(ChatCompletionBackend::new(c.clone())?),
            BackendKind::Vertex(c) => Arc::new(VertexGeminiBackend::new(c.clone())?),
            BackendKind::Mock { id, script, grounded } => {
                let mock = ScriptedBackend::from_script_file(id.clone(), &base.join(script))?;
                Arc::new(if *grounded { mock.grounded() } else { mock })
            }
            BackendKind::Fixture => fixture::backend_arc(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    /// Outputs go to `<output_dir>/<run_id>/`.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetEntry>,
    pub strategies: Vec<StrategyEntry>,
    /// Backend that answers relevancy checks and questions.
    pub backend: String,
    pub backends: Vec<BackendConfig>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "one_u32")]
    pub samples: u32,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_fixtures_dir")]
    pub fixtures_dir: PathBuf,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

fn default_fixtures_dir() -> PathBuf {
    PathBuf::from("fixtures")
}

const SECRET_WORDS: [&str; 5] = ["api_key", "token", "password", "secret", "credential"];

/// Config files name environment variables; they never hold secrets.
fn reject_inline_secrets(text: &str, path: &Path) -> Result<()> {
    fn walk(v: &toml::Value, trail: &str, found: &mut Vec<String>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let lower = k.to_lowercase();
                    if SECRET_WORDS.iter().any(|w| lower.contains(w)) && !lower.ends_with("_env") {
                        found.push(format!("{trail}{k}"));
                    }
                    walk(v, &format!("{trail}{k}."), found);
                }
            }
            toml::Value::Array(items) => items.iter().for_each(|i| walk(i, trail, found)),
            _ => {}
        }
    }
    let value: toml::Value = toml::from_str(text).with_context(|| format!("parsing {}", path.display()))?;
    let mut found = Vec::new();
    walk(&value, "", &mut found);
    if !found.is_empty() {
        bail!(
            "{}: credentials must come from environment variables; name the variable with a *_env key instead of {}",
            path.display(),
            found.join(", ")
        );
    }
    Ok(())
}

/// A loaded config with relative paths resolved against its directory.
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
    pub strategies: Vec<StrategyConfig>,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        reject_inline_secrets(&text, path)?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, base)
    }

    pub fn new(config: RunConfig, base: PathBuf) -> Result<Self> {
        if config.run_id.trim().is_empty() || config.run_id.contains(['/', '\\']) {
            bail!(
                "run_id {:?} must be a non-empty name without path separators",
                config.run_id
            );
        }
        if config.datasets.is_empty() {
            bail!("no datasets configured");
        }
        if config.strategies.is_empty() {
            bail!("no strategies configured");
        }
        let mut ids: Vec<&str> = config.backends.iter().map(BackendConfig::id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            bail!("backend {:?} is configured twice", w[0]);
        }
        if !ids.contains(&config.backend.as_str()) {
            bail!(
                "backend {:?} is not configured (configured: {})",
                config.backend,
                ids.join(", ")
            );
        }
        let strategies = config
            .strategies
            .iter()
            .map(StrategyEntry::resolve)
            .collect::<Result<Vec<_>>>()?;
        let mut names: Vec<String> = strategies.iter().map(StrategyConfig::name).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            bail!("strategy {} is listed twice", w[0]);
        }
        if strategies
            .iter()
            .any(|s| s.kind == culturag_core::rag::StrategyKind::KbGrounded)
            && config.corpus.is_none()
        {
            bail!("KB-grounded strategies need `corpus` (and optionally `index`)");
        }
        Ok(Loaded {
            config,
            base,
            strategies,
        })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path(&self.config.output_dir).join(&self.config.run_id)
    }

    fn fixture_path(&self, id: &str) -> PathBuf {
        self.path(&self.config.fixtures_dir).join(format!("{id}.jsonl"))
    }

    pub fn gateway(&self) -> Result<Gateway> {
        let mut gw = Gateway::new().with_retry(self.config.retry.clone());
        for b in &self.config.backends {
            let backend: Arc<dyn Backend> = match self.config.mode {
                Mode::Live => b.live(&self.base)?,
                Mode::Record => {
                    let path = self.fixture_path(b.id());
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir)?;
                    }
                    Arc::new(RecordingBackend::new(b.live(&self.base)?, &path)?)
                }
                Mode::Replay => {
                    let path = self.fixture_path(b.id());
                    let replay = ReplayBackend::from_file(b.id(), &path)
                        .with_context(|| format!("reading replay fixture {}", path.display()))?;
                    Arc::new(replay)
                }
            };
            gw.register(backend, b.limiter());
        }
        Ok(gw)
    }

    /// The knowledge base, from the stored index when configured, else
    /// embedded on the fly. `None` when no strategy needs it.
    pub fn knowledge_base(&self) -> Result<Option<KnowledgeBase>> {
        let Some(corpus) = &self.config.corpus else {
            return Ok(None);
        };
        let docs = kb::read_corpus(&self.path(corpus))?;
        let embedder = self.config.embedder.build()?;
        let kb = match &self.config.index {
            Some(index) => {
                let path = self.path(index);
                let index = VectorIndex::load(&path).with_context(|| format!("loading index {}", path.display()))?;
                KnowledgeBase::from_parts(embedder, index, docs)?
            }
            None => KnowledgeBase::build(embedder, docs)?,
        };
        Ok(Some(kb))
    }
}
