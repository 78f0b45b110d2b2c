//! User interaction sequences, chronological splits, and candidate sets.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::config::SplitRatios;
use crate::error::Error;
use crate::rng::{self, salt};

/// One user's interactions, oldest first. The final entry is the held-out
/// next item when the sequence is used for training or evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub user_id: u32,
    pub item_ids: Vec<u32>,
}

impl InteractionSequence {
    /// Check the sequence can be used: at least two interactions (one step of
    /// history plus a target) and every item present in the catalog.
    pub fn validate(&self, catalog: &Catalog) -> Result<(), Error> {
        if self.item_ids.len() < 2 {
            return Err(Error::SequenceTooShort {
                user_id: self.user_id,
                len: self.item_ids.len(),
            });
        }
        for &id in &self.item_ids {
            catalog.require(id, &format!("sequence of user {}", self.user_id))?;
        }
        Ok(())
    }

    /// Split into (history, target): the last interaction is the target and
    /// the history is the most recent `max_len` interactions before it.
    pub fn history_and_target(&self, max_len: usize) -> Result<(&[u32], u32), Error> {
        if self.item_ids.len() < 2 {
            return Err(Error::SequenceTooShort {
                user_id: self.user_id,
                len: self.item_ids.len(),
            });
        }
        let target = *self.item_ids.last().expect("len >= 2");
        let rest = &self.item_ids[..self.item_ids.len() - 1];
        let start = rest.len().saturating_sub(max_len);
        Ok((&rest[start..], target))
    }
}

/// Load sequences from JSONL and validate each against the catalog.
pub fn load_sequences(path: &Path, catalog: &Catalog) -> Result<Vec<InteractionSequence>, Error> {
    let file = fs::File::open(path)?;
    read_sequences(file, catalog).map_err(|e| e.in_file(path))
}

pub fn read_sequences<R: Read>(
    reader: R,
    catalog: &Catalog,
) -> Result<Vec<InteractionSequence>, Error> {
    let mut seqs: Vec<InteractionSequence> = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: InteractionSequence =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        seq.validate(catalog)?;
        if !seen.insert(seq.user_id) {
            return Err(Error::MalformedLine {
                line: lineno + 1,
                message: format!("duplicate user id {}", seq.user_id),
            });
        }
        seqs.push(seq);
    }
    Ok(seqs)
}

pub fn save_sequences(seqs: &[InteractionSequence], path: &Path) -> Result<(), Error> {
    let mut out = Vec::new();
    for seq in seqs {
        serde_json::to_writer(&mut out, seq)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Sequences partitioned by user into train / validation / test.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<InteractionSequence>,
    pub valid: Vec<InteractionSequence>,
    pub test: Vec<InteractionSequence>,
}

/// Partition users at the given ratios after a seeded shuffle.
///
/// Validation and test sizes are rounded down; the remainder goes to train,
/// so every user lands in exactly one part and train is never starved.
pub fn split_sequences(
    seqs: &[InteractionSequence],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<Split, Error> {
    let violations = ratios.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidConfig { violations });
    }
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[salt::SPLIT]));
    let n = seqs.len();
    let n_valid = (n as f64 * ratios.valid).floor() as usize;
    let n_test = (n as f64 * ratios.test).floor() as usize;
    let n_train = n - n_valid - n_test;
    let pick = |range: std::ops::Range<usize>| -> Vec<InteractionSequence> {
        range.map(|i| seqs[order[i]].clone()).collect()
    };
    Ok(Split {
        train: pick(0..n_train),
        valid: pick(n_train..n_train + n_valid),
        test: pick(n_train + n_valid..n),
    })
}

/// A ranking instance: the held-out target plus `k` sampled negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    target_id: u32,
    negative_ids: Vec<u32>,
}

impl CandidateSet {
    /// Build and validate against the user's full interaction sequence:
    /// negatives must be distinct, must not include the target, and must be
    /// items the user never interacted with.
    pub fn new(
        target_id: u32,
        negative_ids: Vec<u32>,
        seq: &InteractionSequence,
    ) -> Result<Self, Error> {
        let interacted: HashSet<u32> = seq.item_ids.iter().copied().collect();
        let mut seen = HashSet::new();
        for &id in &negative_ids {
            if id == target_id {
                return Err(Error::InvalidCandidates {
                    target_id,
                    reason: format!("negative {id} equals the target"),
                });
            }
            if interacted.contains(&id) {
                return Err(Error::InvalidCandidates {
                    target_id,
                    reason: format!("negative {id} was interacted with by user {}", seq.user_id),
                });
            }
            if !seen.insert(id) {
                return Err(Error::InvalidCandidates {
                    target_id,
                    reason: format!("negative {id} appears twice"),
                });
            }
        }
        Ok(CandidateSet {
            target_id,
            negative_ids,
        })
    }

    pub fn target_id(&self) -> u32 {
        self.target_id
    }

    pub fn negative_ids(&self) -> &[u32] {
        &self.negative_ids
    }

    /// Target plus negatives: all candidate ids, target first.
    pub fn all_ids(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(1 + self.negative_ids.len());
        ids.push(self.target_id);
        ids.extend_from_slice(&self.negative_ids);
        ids
    }

    pub fn len(&self) -> usize {
        1 + self.negative_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Draw `k` negatives for a user: uniform without replacement over catalog
/// items the user never interacted with. The draw is addressed by
/// `(seed, user_id)`, so it does not depend on evaluation order.
pub fn sample_candidates(
    seq: &InteractionSequence,
    catalog: &Catalog,
    k: usize,
    seed: u64,
) -> Result<CandidateSet, Error> {
    let (_, target) = seq.history_and_target(usize::MAX)?;
    let interacted: HashSet<u32> = seq.item_ids.iter().copied().collect();
    let mut pool: Vec<u32> = catalog
        .items()
        .iter()
        .map(|it| it.id)
        .filter(|id| !interacted.contains(id))
        .collect();
    if pool.len() < k {
        return Err(Error::InvalidCandidates {
            target_id: target,
            reason: format!(
                "user {} has only {} non-interacted items; {k} negatives requested",
                seq.user_id,
                pool.len()
            ),
        });
    }
    let mut rng = rng::stream(seed, &[salt::CANDIDATES, u64::from(seq.user_id)]);
    // Partial Fisher-Yates: the first k slots become the sample.
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    CandidateSet::new(target, pool, seq)
}
