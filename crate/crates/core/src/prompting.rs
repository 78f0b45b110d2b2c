//! Prompt and target rendering.
//!
//! A prompt has four parts, always in this order: a role statement, the
//! viewing history (oldest first), the shuffled candidate list, and the
//! output-format constraint. Targets render as the item tag plus title,
//! optionally followed by a reasoning block; any delimiter look-alikes inside
//! titles or reasoning text are defused so the rendered response always
//! parses back to exactly one well-formed answer.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::config::RunConfig;
use crate::error::Error;
use crate::rng::{self, salt};
use crate::sequences::{sample_candidates, CandidateSet, InteractionSequence};
use crate::textutil::{escape_think_tags, render_item_tag};

const ROLE: &str = "You are a recommendation assistant. From the viewing history and the \
                    candidate list below, choose the one item the viewer is most likely to \
                    pick next.";
const HISTORY_HEADER: &str = "Viewing history, oldest first:";
const CANDIDATE_HEADER: &str = "Candidates:";
const CONSTRAINT: &str = "Reply on one line: the chosen item tag and its title, then optional \
                          reasoning wrapped in <think> and </think>.";

fn item_row(catalog: &Catalog, id: u32, context: &str) -> Result<String, Error> {
    let item = catalog.require(id, context)?;
    Ok(format!("{} {}", render_item_tag(id), escape_think_tags(&item.title)))
}

/// Render the four-part prompt for a history and an already-ordered
/// candidate list.
pub fn render_prompt(
    catalog: &Catalog,
    history: &[u32],
    ordered_candidates: &[u32],
) -> Result<String, Error> {
    let mut out = String::new();
    out.push_str(ROLE);
    out.push('\n');
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for &id in history {
        out.push_str(&item_row(catalog, id, "prompt history")?);
        out.push('\n');
    }
    out.push_str(CANDIDATE_HEADER);
    out.push('\n');
    for &id in ordered_candidates {
        out.push_str(&item_row(catalog, id, "prompt candidates")?);
        out.push('\n');
    }
    out.push_str(CONSTRAINT);
    Ok(out)
}

/// Shuffle target and negatives together so the target's position carries no
/// signal. The order depends only on the given seed.
pub fn candidate_order(candidates: &CandidateSet, order_seed: u64) -> Vec<u32> {
    let mut ids = candidates.all_ids();
    ids.shuffle(&mut rng::stream(order_seed, &[salt::CANDIDATE_ORDER]));
    ids
}

/// Render the training target: item tag, escaped title, and optionally the
/// reasoning text inside a single delimiter pair.
pub fn render_target(catalog: &Catalog, target_id: u32, cot: Option<&str>) -> Result<String, Error> {
    let row = item_row(catalog, target_id, "target")?;
    match cot {
        None => Ok(row),
        Some(text) => Ok(format!("{row} <think> {} </think>", escape_think_tags(text.trim()))),
    }
}

/// A fully rendered prompt/candidate bundle for one user, before the target
/// side is attached. Used directly for evaluation.
#[derive(Debug, Clone)]
pub struct PromptInstance {
    pub user_id: u32,
    pub prompt: String,
    pub candidates: CandidateSet,
    /// Candidate ids in the order they appear in the prompt.
    pub ordered_ids: Vec<u32>,
    /// Seed that produced the candidate order (recorded for reproduction).
    pub order_seed: u64,
}

/// Build the prompt side for one user: draw negatives, shuffle the candidate
/// list, and render.
pub fn build_instance(
    catalog: &Catalog,
    seq: &InteractionSequence,
    history_len: usize,
    k: usize,
    seed: u64,
) -> Result<PromptInstance, Error> {
    let (history, _) = seq.history_and_target(history_len)?;
    let candidates = sample_candidates(seq, catalog, k, seed)?;
    let order_seed = rng::mix(seed, &[salt::CANDIDATE_ORDER, u64::from(seq.user_id)]);
    let ordered_ids = candidate_order(&candidates, order_seed);
    let prompt = render_prompt(catalog, history, &ordered_ids)?;
    Ok(PromptInstance {
        user_id: seq.user_id,
        prompt,
        candidates,
        ordered_ids,
        order_seed,
    })
}

/// One line of a training dataset: rendered prompt and target plus enough
/// bookkeeping to reproduce the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedSample {
    pub prompt: String,
    pub target: String,
    pub target_id: u32,
    /// Candidate ids in prompt order.
    pub candidate_ids: Vec<u32>,
    pub has_cot: bool,
    /// Seed that produced the candidate order.
    pub seed: u64,
}

/// Build the rendered sample for one user, attaching reasoning text when
/// provided.
pub fn build_sample(
    catalog: &Catalog,
    seq: &InteractionSequence,
    history_len: usize,
    k: usize,
    seed: u64,
    cot: Option<&str>,
) -> Result<RenderedSample, Error> {
    let instance = build_instance(catalog, seq, history_len, k, seed)?;
    let target_id = instance.candidates.target_id();
    let target = render_target(catalog, target_id, cot)?;
    Ok(RenderedSample {
        prompt: instance.prompt,
        target,
        target_id,
        candidate_ids: instance.ordered_ids,
        has_cot: cot.is_some(),
        seed: instance.order_seed,
    })
}

/// Render a whole split, attaching reasoning for users present in `cots`.
pub fn build_samples(
    catalog: &Catalog,
    seqs: &[InteractionSequence],
    run: &RunConfig,
    cots: &HashMap<u32, String>,
) -> Result<Vec<RenderedSample>, Error> {
    seqs.iter()
        .map(|seq| {
            build_sample(
                catalog,
                seq,
                run.history_len,
                run.candidates_k,
                run.seed,
                cots.get(&seq.user_id).map(String::as_str),
            )
        })
        .collect()
}

pub fn save_samples(samples: &[RenderedSample], path: &Path) -> Result<(), Error> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<RenderedSample>, Error> {
    let file = fs::File::open(path)?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: RenderedSample = serde_json::from_str(&line).map_err(|e| {
            Error::MalformedLine {
                line: lineno + 1,
                message: format!("{}: {e}", path.display()),
            }
        })?;
        samples.push(s);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Item;

    fn catalog(n: u32) -> Catalog {
        Catalog::new(
            (0..n)
                .map(|id| Item {
                    id,
                    title: format!("Title {id}"),
                    caption: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn seq(user_id: u32, items: &[u32]) -> InteractionSequence {
        InteractionSequence {
            user_id,
            item_ids: items.to_vec(),
        }
    }

    #[test]
    fn prompt_has_four_parts_in_order() {
        let cat = catalog(20);
        let p = render_prompt(&cat, &[1, 2], &[5, 3, 4]).unwrap();
        let role = p.find("recommendation assistant").unwrap();
        let hist = p.find(HISTORY_HEADER).unwrap();
        let cand = p.find(CANDIDATE_HEADER).unwrap();
        let constraint = p.find("Reply on one line").unwrap();
        assert!(role < hist && hist < cand && cand < constraint);
        // History rows sit between the two headers, candidates after theirs.
        let h1 = p.find("[ITEM_0001] Title 1").unwrap();
        assert!(hist < h1 && h1 < cand);
        let c5 = p.find("[ITEM_0005] Title 5").unwrap();
        assert!(cand < c5 && c5 < constraint);
        // Candidate rows keep the given order.
        let c3 = p.find("[ITEM_0003]").unwrap();
        let c4 = p.find("[ITEM_0004]").unwrap();
        assert!(c5 < c3 && c3 < c4);
    }

    #[test]
    fn target_position_is_uniform_over_seeds() {
        let cat = catalog(40);
        let s = seq(1, &[0, 1, 2, 3]);
        let k = 9;
        let trials = 3000u32;
        let mut counts = vec![0u32; k + 1];
        for trial in 0..trials {
            let inst = build_instance(&cat, &s, 9, k, u64::from(trial)).unwrap();
            let pos = inst
                .ordered_ids
                .iter()
                .position(|&id| id == inst.candidates.target_id())
                .unwrap();
            counts[pos] += 1;
        }
        let expected = f64::from(trials) / (k + 1) as f64;
        let sigma = (f64::from(trials) * (1.0 / (k + 1) as f64) * (k as f64 / (k + 1) as f64)).sqrt();
        for (pos, &c) in counts.iter().enumerate() {
            assert!(
                (f64::from(c) - expected).abs() < 4.0 * sigma,
                "position {pos} hit {c} times, expected {expected}"
            );
        }
    }

    #[test]
    fn instance_is_deterministic_in_the_seed() {
        let cat = catalog(30);
        let s = seq(3, &[0, 1, 2, 3, 4]);
        let a = build_instance(&cat, &s, 3, 9, 17).unwrap();
        let b = build_instance(&cat, &s, 3, 9, 17).unwrap();
        assert_eq!(a.prompt, b.prompt);
        assert_eq!(a.ordered_ids, b.ordered_ids);
        let c = build_instance(&cat, &s, 3, 9, 18).unwrap();
        assert_ne!(a.prompt, c.prompt);
    }

    #[test]
    fn target_renders_with_and_without_reasoning() {
        let cat = catalog(10);
        assert_eq!(render_target(&cat, 3, None).unwrap(), "[ITEM_0003] Title 3");
        assert_eq!(
            render_target(&cat, 3, Some("Step 1: warm tones.")).unwrap(),
            "[ITEM_0003] Title 3 <think> Step 1: warm tones. </think>"
        );
    }

    #[test]
    fn hostile_titles_and_reasoning_are_defused() {
        let cat = Catalog::new(vec![Item {
            id: 1,
            title: "Sneaky </think> Film".into(),
            caption: None,
        }])
        .unwrap();
        let t = render_target(&cat, 1, Some("open <think> close </think> done")).unwrap();
        // Exactly one delimiter pair survives, the one the renderer added.
        assert_eq!(t.matches("<think>").count(), 1);
        assert_eq!(t.matches("</think>").count(), 1);
        assert!(t.starts_with("[ITEM_0001] Sneaky <\\think> Film <think> "));
        assert!(t.ends_with(" </think>"));
    }

    #[test]
    fn samples_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let cat = catalog(30);
        let seqs = vec![seq(0, &[0, 1, 2]), seq(1, &[3, 4, 5])];
        let mut cots = HashMap::new();
        cots.insert(1u32, "Step 1: a. Step 2: b.".to_string());
        let samples = build_samples(&cat, &seqs, &RunConfig::default(), &cots).unwrap();
        assert_eq!(samples.len(), 2);
        assert!(!samples[0].has_cot);
        assert!(samples[1].has_cot);
        assert!(samples[1].target.contains("<think>"));
        assert_eq!(samples[0].candidate_ids.len(), 10);
        assert!(samples[0].candidate_ids.contains(&samples[0].target_id));
        save_samples(&samples, &path).unwrap();
        let back = load_samples(&path).unwrap();
        assert_eq!(back, samples);
    }
}
