//! Offline construction of reasoning records.
//!
//! A reasoning record holds, per user: the visual captions of their history
//! items, a caption-only draft summary, a refined summary that folds in item
//! titles and ends with a predicted taste profile, and a sanitization flag.
//! Records are built once, offline, by prompting a text-generation backend
//! (remote or a deterministic stub) and are later attached to training
//! targets as reasoning supervision.

mod client;
mod pipeline;

pub use client::{GenParams, GenerationClient, RemoteClient, StubClient};
pub use pipeline::{
    build_cot_records, caption_item, extract_profile, generate_valid, pseudo_cot, refine_cot,
    sanitize, score_quality, DimScore, RubricScores, RUBRIC_DIMS,
};

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One user's offline reasoning record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTRecord {
    pub user_id: u32,
    /// `(item_id, caption)` for each history item, oldest first.
    pub captions: Vec<(u32, String)>,
    /// Draft summary written from captions alone.
    pub pseudo_cot: String,
    /// Refined summary; its last step is the predicted taste profile.
    pub refined_cot: String,
    /// The profile sentence extracted from the refined summary.
    pub predicted_profile: String,
    /// True once the leakage scrub has run over this record.
    pub sanitized: bool,
}

pub fn save_records(records: &[CoTRecord], path: &Path) -> Result<(), Error> {
    let mut out = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<CoTRecord>, Error> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CoTRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}
