//! Text-generation backends for offline record construction.
//!
//! `RemoteClient` speaks the common chat-completions wire shape; `StubClient`
//! is a deterministic offline stand-in that answers from registered fixtures
//! or, for the built-in prompt families, synthesizes a plausible reply from
//! a hash of the prompt. Everything downstream is generic over the trait, so
//! the full pipeline runs (and is tested) without network access.

use std::collections::HashMap;

use serde_json::{json, Value};

use crate::error::Error;
use crate::rng::{splitmix, stable_hash};

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.7,
            max_tokens: 256,
        }
    }
}

pub trait GenerationClient: Send + Sync {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<String, Error>;
}

/// Key fixtures by prompt hash and temperature decile so retry ladders (which
/// bump temperature by 0.1 per attempt) can be given distinct canned replies.
fn fixture_key(prompt: &str, temperature: f64) -> (u64, u8) {
    (stable_hash(prompt), (temperature * 10.0).round() as u8)
}

/// Deterministic offline backend.
#[derive(Debug, Default)]
pub struct StubClient {
    fixtures: HashMap<(u64, u8), String>,
}

const PALETTES: [&str; 8] = [
    "slate", "amber", "ivory", "crimson", "teal", "umber", "pearl", "olive",
];
const TEXTURES: [&str; 6] = ["grainy", "matte", "glossy", "woven", "brushed", "misted"];
const MOODS: [&str; 6] = ["quiet", "restless", "warm", "stark", "dreamy", "somber"];

impl StubClient {
    pub fn new() -> Self {
        StubClient::default()
    }

    /// Register a canned reply for an exact prompt at a given temperature.
    pub fn with_fixture(mut self, prompt: &str, temperature: f64, reply: &str) -> Self {
        self.add_fixture(prompt, temperature, reply);
        self
    }

    pub fn add_fixture(&mut self, prompt: &str, temperature: f64, reply: &str) {
        self.fixtures
            .insert(fixture_key(prompt, temperature), reply.to_string());
    }

    fn synthesize(&self, prompt: &str) -> Option<String> {
        let mut state = stable_hash(prompt);
        let mut pick = |list: &[&str]| -> String {
            let draw = splitmix(&mut state);
            list[(draw % list.len() as u64) as usize].to_string()
        };
        if prompt.contains("compact visual descriptions") {
            let (p1, p2) = (pick(&PALETTES), pick(&PALETTES));
            let (t, m) = (pick(&TEXTURES), pick(&MOODS));
            Some(format!("{p1} and {p2} palette, {t} texture, {m} mood"))
        } else if prompt.contains("image descriptions alone") {
            let (m, t) = (pick(&MOODS), pick(&TEXTURES));
            Some(format!(
                "Step 1: the early descriptions share a {m} cast.\nStep 2: the later ones fold in {t} texture.\nStep 3: the common thread is a {m} {t} look."
            ))
        } else if prompt.contains("draft taste summary") {
            let (m, t, p) = (pick(&MOODS), pick(&TEXTURES), pick(&PALETTES));
            Some(format!(
                "Step 1: the draft points at a {m} cast.\nStep 2: the item names lean the same way.\nStep 3: both views agree on texture.\nStep 4: a viewer drawn to {m} moods with {t} texture in {p} tones."
            ))
        } else if prompt.contains("grade a taste-profile rewrite") {
            let mut obj = serde_json::Map::new();
            for dim in super::pipeline::RUBRIC_DIMS {
                obj.insert(
                    dim.to_string(),
                    json!({"score": 3, "evidence": "stub grading"}),
                );
            }
            Some(Value::Object(obj).to_string())
        } else {
            None
        }
    }
}

impl GenerationClient for StubClient {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<String, Error> {
        if let Some(reply) = self.fixtures.get(&fixture_key(prompt, params.temperature)) {
            return Ok(reply.clone());
        }
        self.synthesize(prompt)
            .ok_or_else(|| Error::Remote("stub has no fixture for this prompt".into()))
    }
}

/// Chat-completions backend. The API key is read from the environment at
/// request time so configs never hold secrets.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
}

impl RemoteClient {
    pub fn new(base_url: &str, model: &str, api_key_env: &str) -> Self {
        RemoteClient {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.to_string(),
        }
    }

    fn api_key(&self) -> Result<String, Error> {
        std::env::var(&self.api_key_env).map_err(|_| Error::MissingEnvVar {
            name: self.api_key_env.clone(),
        })
    }
}

impl GenerationClient for RemoteClient {
    fn generate(&self, prompt: &str, params: &GenParams) -> Result<String, Error> {
        let key = self.api_key()?;
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let response: Value = reqwest::blocking::Client::new()
            .post(&url)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| Error::Remote(format!("POST {url}: {e}")))?
            .error_for_status()
            .map_err(|e| Error::Remote(format!("POST {url}: {e}")))?
            .json()
            .map_err(|e| Error::Remote(format!("POST {url}: malformed response: {e}")))?;
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| {
                Error::Remote(format!("POST {url}: response has no message content"))
            })
    }
}
