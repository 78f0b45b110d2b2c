//! Group-relative policy optimization with a clipped surrogate and a
//! reference-policy KL penalty.
//!
//! For each prompt, a group of responses is sampled from a frozen snapshot
//! of the current policy. Rewards are centered within the group (mean-only
//! baseline; standard-deviation scaling is available behind a flag and off
//! by default). The surrogate is the token-level clipped importance-weighted
//! advantage, averaged per response, then per group, then across groups. The
//! KL term against the frozen starting policy is an exact full-vocabulary
//! divergence pooled over every response token, with a sampled estimator
//! available behind a flag.

use rand::Rng;
use reclab_tensor::{AdamState, Tape, Tensor, Value};
use serde::{Deserialize, Serialize};

use super::metrics::MetricsRow;
use super::tokenize_prompt;
use crate::catalog::Catalog;
use crate::config::RunConfig;
use crate::error::Error;
use crate::policy::PolicyModel;
use crate::prompting::RenderedSample;
use crate::rewards::{parse_response, score, title_matches};
use crate::rng::{self, salt};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub rounds: usize,
    /// Prompts drawn from the pool per round; each contributes one group.
    pub prompts_per_round: usize,
    /// Optimizer steps taken on one batch of rollouts before resampling.
    pub inner_iters: usize,
    /// Scale advantages by the in-group standard deviation (off keeps the
    /// mean-only baseline).
    pub normalize_adv: bool,
    /// Exact full-vocabulary KL (on) or the sampled estimator (off).
    pub exact_kl: bool,
    /// Treat responses without a reasoning block as malformed.
    pub require_think: bool,
    pub log_every: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            rounds: 100,
            prompts_per_round: 8,
            inner_iters: 1,
            normalize_adv: false,
            exact_kl: true,
            require_think: false,
            log_every: 1,
        }
    }
}

impl GrpoConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.rounds == 0 {
            v.push("grpo.rounds must be positive".into());
        }
        if self.prompts_per_round == 0 {
            v.push("grpo.prompts_per_round must be positive".into());
        }
        if self.inner_iters == 0 {
            v.push("grpo.inner_iters must be positive".into());
        }
        if self.log_every == 0 {
            v.push("grpo.log_every must be positive".into());
        }
        v
    }
}

/// Center rewards within the group. With `normalize_std` the centered values
/// are additionally divided by the (population) standard deviation plus a
/// small floor.
pub fn advantages(rewards: &[f64], normalize_std: bool) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let mut adv: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    if normalize_std {
        let var = adv.iter().map(|a| a * a).sum::<f64>() / n;
        let denom = var.sqrt() + 1e-8;
        for a in &mut adv {
            *a /= denom;
        }
    }
    adv
}

/// KL penalty inputs for one response, against the frozen reference policy.
pub enum KlTerm {
    /// Full-vocabulary divergence: traced log-softmax rows of the current
    /// policy and the reference's rows over the same positions.
    Exact { new_rows: Value, ref_rows: Tensor },
    /// Sampled estimator from the reference log-probabilities of the taken
    /// tokens.
    Sampled { ref_logp: Vec<f64> },
}

/// One response inside a group, ready for the surrogate.
pub struct GrpoPart {
    /// Traced per-token log-probabilities under the current policy.
    pub new_logp: Value,
    /// Log-probabilities recorded when the response was sampled.
    pub old_logp: Vec<f64>,
    pub advantage: f64,
    pub kl: Option<KlTerm>,
}

/// Build the scalar loss for a batch of groups on an existing tape.
///
/// Returns the loss and, when any part carries a KL term, the pooled KL
/// value (sum of per-token divergences over all such parts divided by their
/// token count).
pub fn grpo_loss(
    tape: &mut Tape,
    groups: &[Vec<GrpoPart>],
    clip_eps: f64,
    kl_beta: f64,
) -> Result<(Value, Option<Value>), Error> {
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(Error::InvalidConfig {
            violations: vec!["grpo loss needs at least one non-empty group".into()],
        });
    }
    let mut group_terms = Vec::with_capacity(groups.len());
    let mut kl_sums: Vec<Value> = Vec::new();
    let mut kl_tokens = 0usize;
    for group in groups {
        let mut part_terms = Vec::with_capacity(group.len());
        for part in group {
            let t_len = part.old_logp.len();
            if t_len == 0 {
                return Err(Error::InvalidConfig {
                    violations: vec!["grpo part has an empty response".into()],
                });
            }
            let old = tape.constant(
                &Tensor::from_vec(&[t_len], part.old_logp.clone()).expect("old logp shape"),
            );
            let diff = tape.sub(part.new_logp, old)?;
            let ratio = tape.exp(diff)?;
            let unclipped = tape.scale(ratio, part.advantage)?;
            let clipped_ratio = tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)?;
            let clipped = tape.scale(clipped_ratio, part.advantage)?;
            let pessimistic = tape.minimum(unclipped, clipped)?;
            part_terms.push(tape.reduce_mean(pessimistic)?);
            if let Some(kl) = &part.kl {
                let sum = match kl {
                    KlTerm::Exact { new_rows, ref_rows } => {
                        let refc = tape.constant(ref_rows);
                        let probs = tape.exp(*new_rows)?;
                        let diff = tape.sub(*new_rows, refc)?;
                        let prod = tape.mul(probs, diff)?;
                        tape.reduce_sum(prod)?
                    }
                    KlTerm::Sampled { ref_logp } => {
                        if ref_logp.len() != t_len {
                            return Err(Error::InvalidConfig {
                                violations: vec![
                                    "sampled KL needs one reference log-probability per token"
                                        .into(),
                                ],
                            });
                        }
                        let refc = tape.constant(
                            &Tensor::from_vec(&[t_len], ref_logp.clone()).expect("shape"),
                        );
                        let d = tape.sub(refc, part.new_logp)?;
                        let r = tape.exp(d)?;
                        let r_minus_d = tape.sub(r, d)?;
                        let s = tape.reduce_sum(r_minus_d)?;
                        tape.add_scalar(s, -(t_len as f64))?
                    }
                };
                kl_sums.push(sum);
                kl_tokens += t_len;
            }
        }
        let mut total = part_terms[0];
        for &v in &part_terms[1..] {
            total = tape.add(total, v)?;
        }
        group_terms.push(tape.scale(total, 1.0 / group.len() as f64)?);
    }
    let mut surr = group_terms[0];
    for &v in &group_terms[1..] {
        surr = tape.add(surr, v)?;
    }
    surr = tape.scale(surr, 1.0 / groups.len() as f64)?;
    let mut loss = tape.neg(surr)?;
    let kl_value = if kl_sums.is_empty() {
        None
    } else {
        let mut total = kl_sums[0];
        for &v in &kl_sums[1..] {
            total = tape.add(total, v)?;
        }
        let pooled = tape.scale(total, 1.0 / kl_tokens as f64)?;
        let weighted = tape.scale(pooled, kl_beta)?;
        loss = tape.add(loss, weighted)?;
        Some(pooled)
    };
    Ok((loss, kl_value))
}

/// Statistics of one optimization round.
#[derive(Debug, Clone, Copy)]
struct RoundTally {
    reward_sum: f64,
    hits: usize,
    valid: usize,
    title_mismatches: usize,
    rollouts: usize,
}

/// One round: snapshot the policy, sample groups, score, and take
/// `inner_iters` clipped-surrogate steps.
#[allow(clippy::too_many_arguments)]
pub fn grpo_round(
    model: &mut PolicyModel,
    reference: &PolicyModel,
    adam: &mut AdamState,
    pool: &[RenderedSample],
    vocab: &Vocabulary,
    catalog: &Catalog,
    run: &RunConfig,
    cfg: &GrpoConfig,
    round: usize,
) -> Result<MetricsRow, Error> {
    if pool.is_empty() {
        return Err(Error::InvalidConfig {
            violations: vec!["grpo prompt pool is empty".into()],
        });
    }
    // Select the round's prompts: distinct while the pool allows it.
    let mut rng = rng::stream(run.seed, &[salt::GRPO_PROMPTS, round as u64]);
    let chosen: Vec<usize> = if pool.len() >= cfg.prompts_per_round {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        for i in 0..cfg.prompts_per_round {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(cfg.prompts_per_round);
        idx
    } else {
        (0..cfg.prompts_per_round)
            .map(|_| rng.random_range(0..pool.len()))
            .collect()
    };

    let old = model.clone();
    let max_new = model.config().max_new;
    let mut tally = RoundTally {
        reward_sum: 0.0,
        hits: 0,
        valid: 0,
        title_mismatches: 0,
        rollouts: 0,
    };

    struct SlotData {
        prompt_tokens: Vec<usize>,
        responses: Vec<Vec<usize>>,
        old_logps: Vec<Vec<f64>>,
        advs: Vec<f64>,
        ref_exact: Vec<Tensor>,
        ref_sampled: Vec<Vec<f64>>,
    }
    let mut slots = Vec::with_capacity(chosen.len());
    for (slot, &idx) in chosen.iter().enumerate() {
        let sample = &pool[idx];
        let prompt_tokens = tokenize_prompt(vocab, &sample.prompt);
        if prompt_tokens.len() + max_new > model.config().max_len {
            return Err(Error::ContextOverflow {
                len: prompt_tokens.len() + max_new,
                max: model.config().max_len,
            });
        }
        let rollouts = old.sample_group(
            &prompt_tokens,
            vocab.eos(),
            run.group_size,
            run.temperature,
            run.top_p,
            max_new,
            run.seed,
            &[round as u64, slot as u64],
        )?;
        let mut rewards = Vec::with_capacity(rollouts.len());
        for r in &rollouts {
            let visible: &[usize] = match r.response.last() {
                Some(&last) if last == vocab.eos() => &r.response[..r.response.len() - 1],
                _ => &r.response,
            };
            let text = vocab.decode(visible);
            let parsed = parse_response(&text, cfg.require_think);
            let breakdown = score(&parsed, sample.target_id);
            rewards.push(breakdown.total);
            tally.reward_sum += breakdown.total;
            tally.rollouts += 1;
            if parsed.format_valid {
                tally.valid += 1;
            }
            if breakdown.hit > 0.0 {
                tally.hits += 1;
                if title_matches(&parsed, catalog) == Some(false) {
                    tally.title_mismatches += 1;
                }
            }
        }
        let advs = advantages(&rewards, cfg.normalize_adv);
        let mut ref_exact = Vec::new();
        let mut ref_sampled = Vec::new();
        if run.kl_beta > 0.0 {
            for r in &rollouts {
                if cfg.exact_kl {
                    ref_exact.push(reference.response_distributions(&prompt_tokens, &r.response)?);
                } else {
                    ref_sampled.push(reference.response_logprobs(&prompt_tokens, &r.response)?);
                }
            }
        }
        slots.push(SlotData {
            prompt_tokens,
            responses: rollouts.iter().map(|r| r.response.clone()).collect(),
            old_logps: rollouts.into_iter().map(|r| r.logprobs).collect(),
            advs,
            ref_exact,
            ref_sampled,
        });
    }

    let mut logged_loss = 0.0;
    let mut logged_kl = None;
    for inner in 0..cfg.inner_iters {
        let mut tape = Tape::new();
        let traced = model.trace(&mut tape);
        let mut groups = Vec::with_capacity(slots.len());
        for slot in &slots {
            let mut parts = Vec::with_capacity(slot.responses.len());
            for (i, response) in slot.responses.iter().enumerate() {
                let (new_logp, new_rows) =
                    traced.response_logprobs(&mut tape, &slot.prompt_tokens, response)?;
                let kl = if run.kl_beta > 0.0 {
                    Some(if cfg.exact_kl {
                        KlTerm::Exact {
                            new_rows,
                            ref_rows: slot.ref_exact[i].clone(),
                        }
                    } else {
                        KlTerm::Sampled {
                            ref_logp: slot.ref_sampled[i].clone(),
                        }
                    })
                } else {
                    None
                };
                parts.push(GrpoPart {
                    new_logp,
                    old_logp: slot.old_logps[i].clone(),
                    advantage: slot.advs[i],
                    kl,
                });
            }
            groups.push(parts);
        }
        let (loss, kl) = grpo_loss(&mut tape, &groups, run.clip_eps, run.kl_beta)?;
        if inner == 0 {
            logged_loss = tape.value(loss).item()?;
            logged_kl = match kl {
                Some(v) => Some(tape.value(v).item()?),
                None => None,
            };
        }
        let grads = tape.backward(loss)?;
        let traced_params = traced.param_values();
        let grad_refs: Vec<Option<&Tensor>> =
            traced_params.iter().map(|&v| grads.wrt(v)).collect();
        let mut params = model.parameters_mut();
        adam.step(&mut params, &grad_refs, run.learning_rate)?;
    }

    if tally.title_mismatches > 0 {
        log::debug!(
            "round {round}: {} hit responses carried a mismatched title",
            tally.title_mismatches
        );
    }
    let n = tally.rollouts as f64;
    Ok(MetricsRow {
        step: round + 1,
        mean_reward: Some(tally.reward_sum / n),
        hit_rate: Some(tally.hits as f64 / n),
        fmt_rate: Some(tally.valid as f64 / n),
        kl: logged_kl,
        loss: logged_loss,
    })
}

/// Full policy-optimization run. The reference policy is a frozen clone of
/// the starting model; the snapshot the rollouts are drawn from is refreshed
/// every round.
pub fn train_grpo(
    model: &mut PolicyModel,
    pool: &[RenderedSample],
    vocab: &Vocabulary,
    catalog: &Catalog,
    run: &RunConfig,
    cfg: &GrpoConfig,
) -> Result<Vec<MetricsRow>, Error> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidConfig { violations });
    }
    let reference = model.clone();
    let sizes: Vec<usize> = model.named_parameters().iter().map(|(_, t)| t.len()).collect();
    let mut adam = AdamState::new(&sizes);
    let mut rows = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let row = grpo_round(
            model, &reference, &mut adam, pool, vocab, catalog, run, cfg, round,
        )?;
        if (round + 1) % cfg.log_every == 0 {
            log::info!(
                "grpo round {}/{} reward {:.3} hit {:.3} fmt {:.3} kl {:.4} loss {:.4}",
                round + 1,
                cfg.rounds,
                row.mean_reward.unwrap_or(f64::NAN),
                row.hit_rate.unwrap_or(f64::NAN),
                row.fmt_rate.unwrap_or(f64::NAN),
                row.kl.unwrap_or(f64::NAN),
                row.loss
            );
        }
        rows.push(row);
    }
    Ok(rows)
}
