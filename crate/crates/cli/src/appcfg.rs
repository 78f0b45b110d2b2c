//! Layered run configuration: built-in defaults, an optional TOML file, and
//! `--set KEY=VALUE` overrides, in that order. Every run writes the resolved
//! result back next to its artifacts so any output directory records exactly
//! what produced it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use reclab_core::policy::ModelConfig;
use reclab_core::synth::WorldConfig;
use reclab_core::train::{GrpoConfig, SftConfig};
use reclab_core::RunConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Full configuration tree, one section per pipeline concern. Unknown keys
/// are rejected so typos fail loudly instead of silently using a default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub run: RunConfig,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub sft: SftConfig,
    pub grpo: GrpoConfig,
    pub datagen: DatagenConfig,
    pub embed: EmbedConfig,
    pub eval: EvalConfig,
}

/// Text-generation backend settings for reasoning-record construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenConfig {
    /// `"stub"` (deterministic, offline) or `"remote"` (chat-completions).
    pub backend: String,
    /// Base URL of the remote chat-completions endpoint.
    pub base_url: String,
    /// Model name sent to the remote endpoint.
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Scrub target titles and item tags from records before storing them,
    /// and refuse unscrubbed records when assembling training data.
    pub sanitize: bool,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            backend: "stub".into(),
            base_url: "http://localhost:8000/v1".into(),
            model: "writer".into(),
            api_key_env: "RECLAB_API_KEY".into(),
            temperature: 0.7,
            max_tokens: 256,
            sanitize: true,
        }
    }
}

impl DatagenConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !matches!(self.backend.as_str(), "stub" | "remote") {
            v.push(format!(
                "datagen.backend must be \"stub\" or \"remote\", got {:?}",
                self.backend
            ));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            v.push(format!(
                "datagen.temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.max_tokens == 0 {
            v.push("datagen.max_tokens must be positive".into());
        }
        if self.backend == "remote" {
            if self.base_url.is_empty() {
                v.push("datagen.base_url must be set for the remote backend".into());
            }
            if self.model.is_empty() {
                v.push("datagen.model must be set for the remote backend".into());
            }
        }
        v
    }
}

/// Embedding backend settings for consistency scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    /// `"hash"` (deterministic feature hashing) or `"remote"`.
    pub backend: String,
    /// Embedding dimensionality for the hash backend.
    pub dim: usize,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    /// On-disk cache for remote embeddings, reused across runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            backend: "hash".into(),
            dim: 256,
            base_url: "http://localhost:8000/v1".into(),
            model: "embedder".into(),
            api_key_env: "RECLAB_API_KEY".into(),
            cache: None,
        }
    }
}

impl EmbedConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !matches!(self.backend.as_str(), "hash" | "remote") {
            v.push(format!(
                "embed.backend must be \"hash\" or \"remote\", got {:?}",
                self.backend
            ));
        }
        if self.dim == 0 {
            v.push("embed.dim must be positive".into());
        }
        if self.backend == "remote" {
            if self.base_url.is_empty() {
                v.push("embed.base_url must be set for the remote backend".into());
            }
            if self.model.is_empty() {
                v.push("embed.model must be set for the remote backend".into());
            }
        }
        v
    }
}

/// Ranking-evaluation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Which split to rank: `"train"`, `"valid"`, or `"test"`.
    pub split: String,
    /// Cutoffs reported as hit rate and discounted gain.
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: "test".into(),
            ks: vec![1, 5, 10],
        }
    }
}

impl EvalConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !matches!(self.split.as_str(), "train" | "valid" | "test") {
            v.push(format!(
                "eval.split must be \"train\", \"valid\", or \"test\", got {:?}",
                self.split
            ));
        }
        if self.ks.is_empty() {
            v.push("eval.ks must list at least one cutoff".into());
        }
        if self.ks.iter().any(|&k| k == 0) {
            v.push("eval.ks entries must be at least 1".into());
        }
        v
    }
}

impl AppConfig {
    /// Every violated bound across every section, so one failed run reports
    /// the complete fix list.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.run.violations();
        v.extend(self.world.violations());
        v.extend(self.model.violations());
        v.extend(self.sft.violations());
        v.extend(self.grpo.violations());
        v.extend(self.datagen.violations());
        v.extend(self.embed.violations());
        v.extend(self.eval.violations());
        v
    }
}

/// Resolve the configuration: defaults, then the file, then `--set`
/// overrides, then the dedicated `--seed` flag.
pub fn load(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<AppConfig, Failure> {
    let mut value = match file {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::Missing {
                    path: path.to_path_buf(),
                    hint: "the file named by --config".into(),
                });
            }
            let text = fs::read_to_string(path)?;
            let table = text.parse::<toml::Table>().map_err(|e| {
                Failure::Config(vec![format!("{}: {e}", path.display())])
            })?;
            toml::Value::Table(table)
        }
        None => toml::Value::Table(toml::Table::new()),
    };
    let mut problems = Vec::new();
    for spec in sets {
        if let Err(msg) = apply_override(&mut value, spec) {
            problems.push(msg);
        }
    }
    if !problems.is_empty() {
        return Err(Failure::Config(problems));
    }
    if let Some(seed) = seed {
        apply_override(&mut value, &format!("run.seed={seed}"))
            .map_err(|m| Failure::Config(vec![m]))?;
    }
    let cfg: AppConfig = value
        .try_into()
        .map_err(|e| Failure::Config(vec![e.to_string()]))?;
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Failure::Config(violations));
    }
    Ok(cfg)
}

/// Apply one `section.key=value` override onto the raw TOML tree. The value
/// side is parsed as TOML (so numbers, booleans, and arrays work) and falls
/// back to a plain string, letting `--set datagen.backend=remote` skip the
/// quoting dance.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), String> {
    let Some((key, raw)) = spec.split_once('=') else {
        return Err(format!("--set {spec}: expected KEY=VALUE"));
    };
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(format!("--set {spec}: empty key segment"));
    }
    let parsed = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("override table holds v"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let segments: Vec<&str> = key.split('.').collect();
    let mut cursor = root;
    for seg in &segments[..segments.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| format!("--set {spec}: {seg} is not a table"))?;
        cursor = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| format!("--set {spec}: key path crosses a non-table value"))?;
    table.insert(segments[segments.len() - 1].to_string(), parsed);
    Ok(())
}

/// `--help` footer: every key with its default, as a ready-to-edit file.
pub fn help_footer() -> String {
    let defaults =
        toml::to_string_pretty(&AppConfig::default()).expect("defaults serialize");
    format!(
        "Configuration keys and their defaults (TOML; any subset may appear in \
         the --config file, and --set KEY=VALUE overrides single keys):\n\n{defaults}"
    )
}

/// Write the resolved configuration with a timestamp header. The header line
/// is the one part of an artifact directory exempt from byte-identical
/// reproduction, so it carries no other content.
pub fn write_snapshot(cfg: &AppConfig, path: &Path) -> Result<(), Failure> {
    let body = toml::to_string_pretty(cfg)
        .map_err(|e| Failure::Other(anyhow::anyhow!("serialize config: {e}")))?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    fs::write(path, format!("# generated_at {stamp}\n{body}"))?;
    Ok(())
}
