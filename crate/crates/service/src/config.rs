use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use intentgate_core::corpus::{load_registry, IntentRegistry};
use intentgate_core::pipeline::{Mode, Pipeline, PipelineConfig};
use intentgate_core::rerank::{
    ConcurrencyLimit, RemoteClient, RemoteSettings, RerankerClient, RetryPolicy, ScriptedClient,
};
use intentgate_core::shortlist::ShortlistModel;

pub const ENV_PREFIX: &str = "INTENTGATE_";
pub const DEFAULT_FALLBACK: &str =
    "Prepáčte, tejto otázke nerozumiem. Skúste ju preformulovať alebo kontaktujte klientsku linku.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankerKind {
    /// Answers from a prompt-hash script file; unknown prompts get the default verdict.
    #[default]
    Scripted,
    /// OpenAI-style chat-completions endpoint.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankerConfig {
    pub kind: RerankerKind,
    /// Script file for the scripted kind.
    pub script: Option<PathBuf>,
    /// Reply for prompts missing from the script. Defaults to the invalid literal.
    pub default_verdict: Option<String>,
    pub remote: RemoteSettings,
    pub retry: RetryPolicy,
}

impl Default for RerankerConfig {
    fn default() -> Self {
        Self {
            kind: RerankerKind::Scripted,
            script: None,
            default_verdict: None,
            remote: RemoteSettings::default(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub model: PathBuf,
    pub registry: PathBuf,
    /// Normalization is always taken from the model file.
    pub pipeline: PipelineConfig,
    pub reranker: Option<RerankerConfig>,
    pub fallback_response: String,
    pub allow_threshold_override: bool,
    pub expose_trace: bool,
    pub decision_ring_size: usize,
    /// Maximum concurrent reranker calls.
    pub max_in_flight: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            model: PathBuf::from("model.jsonl"),
            registry: PathBuf::from("data/registry.jsonl"),
            pipeline: PipelineConfig::default(),
            reranker: None,
            fallback_response: DEFAULT_FALLBACK.into(),
            allow_threshold_override: true,
            expose_trace: true,
            decision_ring_size: 1024,
            max_in_flight: 8,
        }
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies `INTENTGATE_*` variables looked up through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        let get = |key: &str| {
            var(&format!("{ENV_PREFIX}{key}")).map(|v| (format!("{ENV_PREFIX}{key}"), v))
        };
        let bad = |name: &str, value: &str| anyhow::anyhow!("{name}: cannot parse `{value}`");
        if let Some((_, v)) = get("LISTEN") {
            self.listen = v;
        }
        if let Some((_, v)) = get("MODEL") {
            self.model = v.into();
        }
        if let Some((_, v)) = get("REGISTRY") {
            self.registry = v.into();
        }
        if let Some((_, v)) = get("FALLBACK_RESPONSE") {
            self.fallback_response = v;
        }
        if let Some((n, v)) = get("MODE") {
            self.pipeline.mode = v.parse().map_err(|_| bad(&n, &v))?;
        }
        if let Some((n, v)) = get("THRESHOLD") {
            self.pipeline.threshold = v.trim().parse().map_err(|_| bad(&n, &v))?;
        }
        if let Some((n, v)) = get("ALLOW_THRESHOLD_OVERRIDE") {
            self.allow_threshold_override = parse_bool(&v).ok_or_else(|| bad(&n, &v))?;
        }
        if let Some((n, v)) = get("EXPOSE_TRACE") {
            self.expose_trace = parse_bool(&v).ok_or_else(|| bad(&n, &v))?;
        }
        if let Some((n, v)) = get("DECISION_RING_SIZE") {
            self.decision_ring_size = v.trim().parse().map_err(|_| bad(&n, &v))?;
        }
        if let Some((n, v)) = get("MAX_IN_FLIGHT") {
            self.max_in_flight = v.trim().parse().map_err(|_| bad(&n, &v))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.listen
            .parse::<SocketAddr>()
            .with_context(|| format!("listen address `{}` is not host:port", self.listen))?;
        self.pipeline.validate()?;
        if self.pipeline.mode == Mode::Rerank && self.reranker.is_none() {
            bail!("mode is rerank but no [reranker] section is configured");
        }
        if self.decision_ring_size == 0 {
            bail!("decision_ring_size must be at least 1");
        }
        if self.max_in_flight == 0 {
            bail!("max_in_flight must be at least 1");
        }
        Ok(())
    }
}

/// Builds the reranker client, bounded to `max_in_flight` concurrent calls.
pub fn build_client(
    reranker: &RerankerConfig,
    registry: &IntentRegistry,
    max_in_flight: usize,
) -> Result<Arc<dyn RerankerClient>> {
    let default = reranker
        .default_verdict
        .clone()
        .unwrap_or_else(|| registry.invalid_literal().to_owned());
    Ok(match reranker.kind {
        RerankerKind::Scripted => {
            let client = match &reranker.script {
                Some(path) => ScriptedClient::load(path)
                    .with_context(|| format!("loading reranker script {}", path.display()))?,
                None => ScriptedClient::new(),
            }
            .with_default(default);
            Arc::new(ConcurrencyLimit::new(client, max_in_flight))
        }
        RerankerKind::Remote => {
            let client = RemoteClient::new(&reranker.remote)?;
            Arc::new(ConcurrencyLimit::new(client, max_in_flight))
        }
    })
}

pub fn load_model(path: &Path) -> Result<ShortlistModel> {
    let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
    ShortlistModel::load(BufReader::new(file))
        .with_context(|| format!("loading model {}", path.display()))
}

pub fn load_registry_file(path: &Path) -> Result<IntentRegistry> {
    load_registry(path).with_context(|| format!("loading registry {}", path.display()))
}

/// Loads model and registry and assembles the pipeline described by `config`.
pub fn load_pipeline(config: &ServiceConfig) -> Result<Pipeline> {
    config.validate()?;
    let registry = load_registry_file(&config.registry)?;
    let model = load_model(&config.model)?;
    let mut pipeline_config = config.pipeline.clone();
    pipeline_config.normalize = model.config().normalize;
    let client = match (&config.reranker, pipeline_config.mode) {
        (Some(r), Mode::Rerank) => Some(build_client(r, &registry, config.max_in_flight)?),
        _ => None,
    };
    let retry = config
        .reranker
        .as_ref()
        .map(|r| r.retry)
        .unwrap_or_default();
    let pipeline = Pipeline::new(pipeline_config, Arc::new(model), Arc::new(registry), client)?;
    Ok(pipeline.with_retry(retry))
}
