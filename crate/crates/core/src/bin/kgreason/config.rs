//! Effective configuration: flags > config file > environment > defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use kgreason::llm::ClientConfig;
use serde::{Deserialize, Serialize};

pub const ENV_BASE_URL: &str = "KGREASON_BASE_URL";
pub const ENV_MODEL: &str = "KGREASON_MODEL";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: Option<String>,
    pub model_id: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub multi_candidate: Option<bool>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub top_k: Option<usize>,
    pub top_n: Option<usize>,
    pub max_len: Option<usize>,
    pub max_paths: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct LlmArgs {
    /// Chat-completions base URL (".../v1" or the full ".../chat/completions").
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model identifier sent with each request.
    #[arg(long)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    /// Retries after a transient failure.
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Maximum concurrent requests.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Endpoint does not honour n > 1; issue one request per candidate.
    #[arg(long)]
    pub single_candidate: bool,
    /// Directory for the on-disk response cache.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

impl LlmArgs {
    pub fn resolve(&self, file: &LlmSection) -> ClientConfig {
        let mut c = ClientConfig::default();
        if let Ok(v) = std::env::var(ENV_BASE_URL) {
            c.base_url = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            c.model_id = v;
        }
        macro_rules! layer {
            ($field:ident, $file:expr, $flag:expr) => {
                if let Some(v) = $file.clone() {
                    c.$field = v;
                }
                if let Some(v) = $flag.clone() {
                    c.$field = v;
                }
            };
        }
        layer!(base_url, file.base_url, self.endpoint);
        layer!(model_id, file.model_id, self.model);
        layer!(api_key_env, file.api_key_env, self.api_key_env);
        layer!(timeout_secs, file.timeout_secs, self.timeout_secs);
        layer!(max_retries, file.max_retries, self.max_retries);
        layer!(max_in_flight, file.max_in_flight, self.max_in_flight);
        layer!(temperature, file.temperature, self.temperature);
        layer!(max_tokens, file.max_tokens, self.max_tokens);
        if let Some(v) = file.multi_candidate {
            c.multi_candidate = v;
        }
        if self.single_candidate {
            c.multi_candidate = false;
        }
        if let Some(v) = file.cache_dir.clone() {
            c.cache_dir = Some(v);
        }
        if let Some(v) = self.cache_dir.clone() {
            c.cache_dir = Some(v);
        }
        c
    }
}

/// Echoed next to every output file so a run can be reproduced.
#[derive(Debug, Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub settings: serde_json::Value,
}

impl<'a> Provenance<'a> {
    pub fn new(command: &'a str, settings: serde_json::Value) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            settings,
        }
    }
}

pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
