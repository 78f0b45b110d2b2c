//! Shared run configuration: the knobs every pipeline stage agrees on.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// User-level split fractions. Validation and test counts are floored;
/// leftover users go to train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            if !(0.0..=1.0).contains(&x) || !x.is_finite() {
                v.push(format!("split.{name} must be in [0, 1], got {x}"));
            }
        }
        let sum = self.train + self.valid + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            v.push(format!("split ratios must sum to 1, got {sum}"));
        }
        v
    }
}

/// Hyper-parameters shared across data construction, training, and
/// evaluation. Defaults are the reference small-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Most recent interactions kept as prompt history (K).
    pub history_len: usize,
    /// Sampled negatives per ranking instance (k); candidate list size is k+1.
    pub candidates_k: usize,
    /// Rollouts per prompt in a policy-gradient group (G).
    pub group_size: usize,
    /// Clip half-width for the probability ratio.
    pub clip_eps: f64,
    /// Weight of the reference-policy KL penalty.
    pub kl_beta: f64,
    /// Sampling temperature for rollouts.
    pub temperature: f64,
    /// Nucleus cutoff for rollouts.
    pub top_p: f64,
    /// Fraction of users whose reasoning traces are kept for supervised
    /// fine-tuning data.
    pub retention_sft: f64,
    /// Fraction kept for the policy-gradient prompt pool.
    pub retention_grpo: f64,
    /// Adam learning rate.
    pub learning_rate: f64,
    pub split: SplitRatios,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 17,
            history_len: 9,
            candidates_k: 9,
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.05,
            temperature: 0.9,
            top_p: 0.9,
            retention_sft: 0.1,
            retention_grpo: 0.05,
            learning_rate: 1e-5,
            split: SplitRatios::default(),
        }
    }
}

impl RunConfig {
    /// Collect every violation instead of stopping at the first, so a bad
    /// config file can be fixed in one pass.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.history_len == 0 {
            v.push("history_len must be at least 1".into());
        }
        if self.candidates_k == 0 {
            v.push("candidates_k must be at least 1".into());
        }
        if self.group_size < 2 {
            v.push(format!(
                "group_size must be at least 2 (group-relative baselines need it), got {}",
                self.group_size
            ));
        }
        if !self.clip_eps.is_finite() || self.clip_eps <= 0.0 || self.clip_eps >= 1.0 {
            v.push(format!("clip_eps must be in (0, 1), got {}", self.clip_eps));
        }
        if !self.kl_beta.is_finite() || self.kl_beta < 0.0 {
            v.push(format!("kl_beta must be non-negative, got {}", self.kl_beta));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            v.push(format!("temperature must be positive, got {}", self.temperature));
        }
        if !self.top_p.is_finite() || self.top_p <= 0.0 || self.top_p > 1.0 {
            v.push(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        for (name, x) in [
            ("retention_sft", self.retention_sft),
            ("retention_grpo", self.retention_grpo),
        ] {
            if !x.is_finite() || x <= 0.0 || x > 1.0 {
                v.push(format!("{name} must be in (0, 1], got {x}"));
            }
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            v.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        v.extend(self.split.violations());
        v
    }

    pub fn validate(&self) -> Result<(), Error> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig { violations })
        }
    }
}
