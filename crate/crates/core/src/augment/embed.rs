//! Text embedders behind one trait: a deterministic hashed bag-of-words for
//! offline runs and a remote embeddings endpoint with a file-backed cache.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::error::Error;
use crate::rng::{splitmix, stable_hash};

/// Default dimensionality of the hashed embedder.
pub const EMBED_DIM: usize = 256;

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, Error>;
    fn dim(&self) -> usize;
}

/// Signed feature hashing over lowercased alphanumeric tokens, L2-normalized.
/// Shared words produce positive cosine, disjoint vocabularies hover near
/// zero, and no fitted model or network is involved.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: EMBED_DIM }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, Error> {
        let mut v = vec![0.0; self.dim];
        for raw in text.split_whitespace() {
            let token: String = raw
                .chars()
                .filter(char::is_ascii_alphanumeric)
                .collect::<String>()
                .to_ascii_lowercase();
            if token.is_empty() {
                continue;
            }
            let h = stable_hash(&token);
            let bucket = (h % self.dim as u64) as usize;
            let mut state = h;
            let sign = if splitmix(&mut state) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Cosine similarity; either vector having zero norm yields 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine over mismatched dimensions");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Remote embeddings endpoint with an in-memory cache that can be loaded
/// from and flushed to a JSON file, so repeated runs pay for each distinct
/// text once.
pub struct RemoteEmbedder {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    dim: usize,
    cache_path: Option<PathBuf>,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl RemoteEmbedder {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key_env: &str,
        dim: usize,
        cache_path: Option<&Path>,
    ) -> Result<Self, Error> {
        let mut cache = HashMap::new();
        if let Some(path) = cache_path {
            if path.exists() {
                let text = std::fs::read_to_string(path)?;
                cache = serde_json::from_str(&text)?;
            }
        }
        Ok(RemoteEmbedder {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.to_string(),
            dim,
            cache_path: cache_path.map(Path::to_path_buf),
            cache: Mutex::new(cache),
        })
    }

    pub fn save_cache(&self) -> Result<(), Error> {
        if let Some(path) = &self.cache_path {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            std::fs::write(path, serde_json::to_string(&*cache)?)?;
        }
        Ok(())
    }

    fn fetch(&self, text: &str) -> Result<Vec<f64>, Error> {
        let key = std::env::var(&self.api_key_env).map_err(|_| Error::MissingEnvVar {
            name: self.api_key_env.clone(),
        })?;
        let url = format!("{}/embeddings", self.base_url);
        let body = json!({"model": self.model, "input": [text]});
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
        let data = response["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| Error::Remote(format!("POST {url}: response has no embedding")))?;
        let v: Option<Vec<f64>> = data.iter().map(Value::as_f64).collect();
        v.ok_or_else(|| Error::Remote(format!("POST {url}: non-numeric embedding")))
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, Error> {
        if let Some(hit) = self.cache.lock().expect("embedding cache poisoned").get(text) {
            return Ok(hit.clone());
        }
        let v = self.fetch(text)?;
        self.cache
            .lock()
            .expect("embedding cache poisoned")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
