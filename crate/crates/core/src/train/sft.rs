//! Supervised fine-tuning: next-token cross-entropy on the target side.
//!
//! The loss for one sample is the mean negative log-likelihood of its target
//! tokens (prompt positions are masked out); the batch loss is the mean over
//! samples. Batches are drawn from a step-addressed stream, so a run is
//! reproducible regardless of how it is scheduled.

use rand::Rng;
use reclab_tensor::{AdamState, Tape};
use serde::{Deserialize, Serialize};

use super::{metrics::MetricsRow, tokenize_sample, TokenizedSample};
use crate::config::RunConfig;
use crate::error::Error;
use crate::policy::PolicyModel;
use crate::prompting::RenderedSample;
use crate::rng::{self, salt};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Record a metrics row every this many steps (the last step is always
    /// recorded).
    pub log_every: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            steps: 800,
            batch_size: 8,
            log_every: 20,
        }
    }
}

impl SftConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.steps == 0 {
            v.push("sft.steps must be positive".into());
        }
        if self.batch_size == 0 {
            v.push("sft.batch_size must be positive".into());
        }
        if self.log_every == 0 {
            v.push("sft.log_every must be positive".into());
        }
        v
    }
}

/// One optimizer step on a batch. Returns the batch loss.
pub fn sft_step(
    model: &mut PolicyModel,
    adam: &mut AdamState,
    batch: &[&TokenizedSample],
    lr: f64,
) -> Result<f64, Error> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig {
            violations: vec!["sft batch must not be empty".into()],
        });
    }
    let mut tape = Tape::new();
    let traced = model.trace(&mut tape);
    let mut per_sample = Vec::with_capacity(batch.len());
    for ts in batch {
        let prompt = &ts.tokens[..ts.prompt_len];
        let response = &ts.tokens[ts.prompt_len..];
        if response.is_empty() {
            return Err(Error::InvalidConfig {
                violations: vec!["sft sample has an empty target side".into()],
            });
        }
        let (logps, _rows) = traced.response_logprobs(&mut tape, prompt, response)?;
        let mean_lp = tape.reduce_mean(logps)?;
        per_sample.push(tape.neg(mean_lp)?);
    }
    let mut total = per_sample[0];
    for &v in &per_sample[1..] {
        total = tape.add(total, v)?;
    }
    let loss = tape.scale(total, 1.0 / batch.len() as f64)?;
    let loss_val = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    let traced_params = traced.param_values();
    let grad_refs: Vec<Option<&reclab_tensor::Tensor>> =
        traced_params.iter().map(|&v| grads.wrt(v)).collect();
    let mut params = model.parameters_mut();
    adam.step(&mut params, &grad_refs, lr)?;
    Ok(loss_val)
}

/// The same loss computed without the tape, used as an independent check.
pub fn sft_loss_eager(model: &PolicyModel, batch: &[&TokenizedSample]) -> Result<f64, Error> {
    let mut total = 0.0;
    for ts in batch {
        let prompt = &ts.tokens[..ts.prompt_len];
        let response = &ts.tokens[ts.prompt_len..];
        let lps = model.response_logprobs(prompt, response)?;
        let mean: f64 = lps.iter().sum::<f64>() / lps.len() as f64;
        total += -mean;
    }
    Ok(total / batch.len() as f64)
}

/// Run supervised fine-tuning over rendered samples. The model is updated in
/// place; the returned rows are the logged steps (reward columns empty).
pub fn train_sft(
    model: &mut PolicyModel,
    samples: &[RenderedSample],
    vocab: &Vocabulary,
    run: &RunConfig,
    cfg: &SftConfig,
) -> Result<Vec<MetricsRow>, Error> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidConfig { violations });
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig {
            violations: vec!["sft needs at least one sample".into()],
        });
    }
    let tokenized: Vec<TokenizedSample> = samples
        .iter()
        .map(|s| tokenize_sample(vocab, s))
        .collect();
    let max_len = model.config().max_len;
    for ts in &tokenized {
        if ts.tokens.len() > max_len {
            return Err(Error::ContextOverflow {
                len: ts.tokens.len(),
                max: max_len,
            });
        }
    }
    let sizes: Vec<usize> = model.named_parameters().iter().map(|(_, t)| t.len()).collect();
    let mut adam = AdamState::new(&sizes);
    let mut rows = Vec::new();
    for step in 0..cfg.steps {
        let mut rng = rng::stream(run.seed, &[salt::SFT_BATCH, step as u64]);
        let batch: Vec<&TokenizedSample> = (0..cfg.batch_size)
            .map(|_| &tokenized[rng.random_range(0..tokenized.len())])
            .collect();
        let loss = sft_step(model, &mut adam, &batch, run.learning_rate)?;
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            log::info!("sft step {}/{} loss {loss:.4}", step + 1, cfg.steps);
            rows.push(MetricsRow {
                step: step + 1,
                mean_reward: None,
                hit_rate: None,
                fmt_rate: None,
                kl: None,
                loss,
            });
        }
    }
    Ok(rows)
}
