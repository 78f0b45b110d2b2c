//! Ranking evaluation: hit rate and NDCG over held-out interactions.
//!
//! For each user the evaluator rebuilds the same prompt the policy trains
//! against (history plus a shuffled candidate list) and scores every
//! candidate by the mean per-token log-probability of its rendered target
//! line. Candidates are ranked by that score; the held-out item's rank
//! feeds HR@k and NDCG@k. Length-normalizing removes the advantage short
//! titles would otherwise enjoy.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::catalog::Catalog;
use crate::config::RunConfig;
use crate::error::Error;
use crate::policy::PolicyModel;
use crate::prompting::{build_instance, render_target};
use crate::sequences::InteractionSequence;
use crate::train::{tokenize_prompt, tokenize_target};
use crate::vocab::Vocabulary;

/// The held-out item's rank among its candidate set, best rank 1. Ties are
/// broken against lower item ids so equal scores cannot flatter the target.
pub fn rank_for_user(
    model: &PolicyModel,
    vocab: &Vocabulary,
    catalog: &Catalog,
    seq: &InteractionSequence,
    run: &RunConfig,
) -> Result<usize, Error> {
    let instance = build_instance(catalog, seq, run.history_len, run.candidates_k, run.seed)?;
    let prompt_tokens = tokenize_prompt(vocab, &instance.prompt);
    let continuations: Vec<Vec<usize>> = instance
        .ordered_ids
        .iter()
        .map(|&id| Ok(tokenize_target(vocab, &render_target(catalog, id, None)?)))
        .collect::<Result<_, Error>>()?;
    let scored = model.score_continuations(&prompt_tokens, &continuations)?;
    let mean = |logprobs: &[f64]| -> f64 {
        logprobs.iter().sum::<f64>() / logprobs.len() as f64
    };
    let target = instance.candidates.target_id();
    let target_idx = instance
        .ordered_ids
        .iter()
        .position(|&id| id == target)
        .expect("target is always in its own candidate list");
    let target_score = mean(&scored[target_idx]);
    let mut rank = 1;
    for (idx, &id) in instance.ordered_ids.iter().enumerate() {
        if id == target {
            continue;
        }
        let s = mean(&scored[idx]);
        if s > target_score || (s == target_score && id < target) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// 1 when the rank makes the cut, else 0.
pub fn hr_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// Discounted gain of a single relevant item at `rank`: `1 / log2(rank + 1)`
/// inside the cut, 0 outside.
pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank as f64) + 1.0).log2()
    } else {
        0.0
    }
}

/// One evaluation row: a split, a cutoff, and the averaged metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub split: String,
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub n_users: usize,
    pub seed: u64,
}

/// Rank every user in the split (in parallel; ranks are order-preserving)
/// and average the metrics at each cutoff.
pub fn evaluate(
    model: &PolicyModel,
    vocab: &Vocabulary,
    catalog: &Catalog,
    sequences: &[InteractionSequence],
    run: &RunConfig,
    split: &str,
    ks: &[usize],
) -> Result<Vec<EvalRow>, Error> {
    let ranks: Vec<usize> = sequences
        .par_iter()
        .map(|seq| rank_for_user(model, vocab, catalog, seq, run))
        .collect::<Result<_, Error>>()?;
    let n = ranks.len();
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let (mut hr, mut ndcg) = (0.0, 0.0);
        for &rank in &ranks {
            hr += hr_at(rank, k);
            ndcg += ndcg_at(rank, k);
        }
        if n > 0 {
            hr /= n as f64;
            ndcg /= n as f64;
        }
        rows.push(EvalRow {
            split: split.to_string(),
            k,
            hr,
            ndcg,
            n_users: n,
            seed: run.seed,
        });
    }
    Ok(rows)
}

pub const EVAL_HEADER: &str = "split,k,HR,NDCG,n_users,seed";

pub fn write_eval(rows: &[EvalRow], path: &Path) -> Result<(), Error> {
    let mut out = Vec::new();
    writeln!(out, "{EVAL_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.split, r.k, r.hr, r.ndcg, r.n_users, r.seed
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_eval(path: &Path) -> Result<Vec<EvalRow>, Error> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != EVAL_HEADER {
        return Err(Error::MalformedLine {
            line: 1,
            message: format!("expected header {EVAL_HEADER:?}, got {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let malformed = |message: String| Error::MalformedLine {
            line: lineno + 2,
            message,
        };
        if cells.len() != 6 {
            return Err(malformed(format!("expected 6 cells, got {}", cells.len())));
        }
        macro_rules! cell {
            ($i:expr) => {
                cells[$i]
                    .parse()
                    .map_err(|e| malformed(format!("bad cell {:?}: {e}", cells[$i])))?
            };
        }
        rows.push(EvalRow {
            split: cells[0].to_string(),
            k: cell!(1),
            hr: cell!(2),
            ndcg: cell!(3),
            n_users: cell!(4),
            seed: cell!(5),
        });
    }
    Ok(rows)
}
