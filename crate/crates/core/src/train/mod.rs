//! Training: supervised fine-tuning and group-relative policy optimization.

pub mod grpo;
pub mod metrics;
pub mod sft;

pub use grpo::{advantages, grpo_loss, train_grpo, GrpoConfig, GrpoPart, KlTerm};
pub use metrics::{read_metrics, write_metrics, MetricsRow};
pub use sft::{train_sft, SftConfig};

use crate::prompting::RenderedSample;
use crate::vocab::Vocabulary;

/// One training sequence in token space: `<bos> prompt target <eos>`, with
/// the boundary recorded so the loss can mask the prompt side.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSample {
    pub tokens: Vec<usize>,
    /// Number of leading tokens that are prompt (including `<bos>`); only
    /// positions from here on count toward the loss.
    pub prompt_len: usize,
}

/// Prompt tokens as fed to the policy: `<bos>` then the encoded prompt.
pub fn tokenize_prompt(vocab: &Vocabulary, prompt: &str) -> Vec<usize> {
    let mut tokens = vec![vocab.bos()];
    tokens.extend(vocab.encode(prompt));
    tokens
}

/// Target tokens as the policy should produce them: the encoded target then
/// `<eos>`.
pub fn tokenize_target(vocab: &Vocabulary, target: &str) -> Vec<usize> {
    let mut tokens = vocab.encode(target);
    tokens.push(vocab.eos());
    tokens
}

pub fn tokenize_sample(vocab: &Vocabulary, sample: &RenderedSample) -> TokenizedSample {
    let mut tokens = tokenize_prompt(vocab, &sample.prompt);
    let prompt_len = tokens.len();
    tokens.extend(tokenize_target(vocab, &sample.target));
    TokenizedSample { tokens, prompt_len }
}
