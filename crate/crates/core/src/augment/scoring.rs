//! Per-user consistency scores, the quantile filter, and assembly of the
//! retained reasoning mix.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::augment::embed::{cosine, Embedder};
use crate::catalog::Catalog;
use crate::datagen::CoTRecord;
use crate::error::Error;
use crate::sequences::InteractionSequence;

/// One scored user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserScore {
    pub user_id: u32,
    /// Mean caption/title agreement over the history (coarse signal).
    pub s_prime: f64,
    /// Profile/next-title agreement (fine signal).
    pub s_dprime: f64,
    /// Squashed sum of both signals.
    pub s: f64,
    pub retained: bool,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Score every sequence's user. Each needs a reasoning record; scores come
/// back in sequence order with `retained` unset.
pub fn score_users(
    embedder: &dyn Embedder,
    catalog: &Catalog,
    sequences: &[InteractionSequence],
    records: &[CoTRecord],
    history_len: usize,
) -> Result<Vec<UserScore>, Error> {
    let by_user: HashMap<u32, &CoTRecord> =
        records.iter().map(|r| (r.user_id, r)).collect();
    let mut scores = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let record = by_user
            .get(&seq.user_id)
            .ok_or(Error::MissingRecord { user_id: seq.user_id })?;
        let (_, target) = seq.history_and_target(history_len)?;
        let mut s_prime = 0.0;
        if !record.captions.is_empty() {
            for (item_id, caption) in &record.captions {
                let title = &catalog.require(*item_id, "consistency scoring")?.title;
                s_prime += cosine(&embedder.embed(caption)?, &embedder.embed(title)?);
            }
            s_prime /= record.captions.len() as f64;
        }
        let target_title = &catalog.require(target, "consistency scoring")?.title;
        let s_dprime = cosine(
            &embedder.embed(target_title)?,
            &embedder.embed(&record.predicted_profile)?,
        );
        scores.push(UserScore {
            user_id: seq.user_id,
            s_prime,
            s_dprime,
            s: sigmoid(s_prime + s_dprime),
            retained: false,
        });
    }
    Ok(scores)
}

/// Keep exactly `ceil(p * N)` users, highest score first (ties broken by
/// lower user id), marking them in place. Returns the score of the last
/// user kept — the effective threshold.
pub fn quantile_filter(scores: &mut [UserScore], p: f64) -> Result<f64, Error> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig {
            violations: vec![format!("retention fraction must be in (0, 1], got {p}")],
        });
    }
    if scores.is_empty() {
        return Err(Error::InvalidConfig {
            violations: vec!["cannot filter an empty score list".into()],
        });
    }
    let keep = (p * scores.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .s
            .partial_cmp(&scores[a].s)
            .expect("scores are finite")
            .then(scores[a].user_id.cmp(&scores[b].user_id))
    });
    for s in scores.iter_mut() {
        s.retained = false;
    }
    for &i in &order[..keep] {
        scores[i].retained = true;
    }
    Ok(scores[order[keep - 1]].s)
}

/// Map retained users to the reasoning text attached to their training
/// target. Every retained user must have a record, sanitized when
/// `require_sanitized` is set.
pub fn assemble_mix(
    records: &[CoTRecord],
    scores: &[UserScore],
    require_sanitized: bool,
) -> Result<HashMap<u32, String>, Error> {
    let by_user: HashMap<u32, &CoTRecord> =
        records.iter().map(|r| (r.user_id, r)).collect();
    let mut mix = HashMap::new();
    for score in scores.iter().filter(|s| s.retained) {
        let record = by_user
            .get(&score.user_id)
            .ok_or(Error::MissingRecord { user_id: score.user_id })?;
        if require_sanitized && !record.sanitized {
            return Err(Error::UnsanitizedRecord { user_id: score.user_id });
        }
        mix.insert(score.user_id, record.refined_cot.clone());
    }
    Ok(mix)
}

pub const SCORES_HEADER: &str = "user_id,s_prime,s_dprime,s,retained";

pub fn write_scores(scores: &[UserScore], path: &Path) -> Result<(), Error> {
    let mut out = Vec::new();
    writeln!(out, "{SCORES_HEADER}")?;
    for s in scores {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.user_id, s.s_prime, s.s_dprime, s.s, s.retained
        )?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<UserScore>, Error> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header != SCORES_HEADER {
        return Err(Error::MalformedLine {
            line: 1,
            message: format!("expected header {SCORES_HEADER:?}, got {header:?}"),
        });
    }
    let mut scores = Vec::new();
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
        if cells.len() != 5 {
            return Err(malformed(format!("expected 5 cells, got {}", cells.len())));
        }
        let parse = |cell: &str| -> Result<f64, Error> {
            cell.parse()
                .map_err(|e| malformed(format!("bad number {cell:?}: {e}")))
        };
        scores.push(UserScore {
            user_id: cells[0]
                .parse()
                .map_err(|e| malformed(format!("bad user id {:?}: {e}", cells[0])))?,
            s_prime: parse(cells[1])?,
            s_dprime: parse(cells[2])?,
            s: parse(cells[3])?,
            retained: match cells[4] {
                "true" => true,
                "false" => false,
                other => return Err(malformed(format!("bad retained flag {other:?}"))),
            },
        });
    }
    Ok(scores)
}
