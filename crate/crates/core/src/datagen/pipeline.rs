//! The record-construction pipeline: captioning, caption-only drafting,
//! title-aware refinement, leakage scrubbing, and rubric grading.
//!
//! Draft prompts receive only history captions and refinement prompts only
//! history titles — neither function can even be handed the held-out item,
//! so target leakage can only enter through a backend that already knows it.
//! The scrub stage is still run over every record before training because
//! remote backends see the world's full catalog during captioning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::datagen::{CoTRecord, GenParams, GenerationClient};
use crate::error::Error;
use crate::sequences::InteractionSequence;
use crate::textutil::{find_ignore_case, replace_ignore_case};

const CAPTION_TEMPLATE: &str = include_str!("templates/caption.txt");
const PSEUDO_TEMPLATE: &str = include_str!("templates/pseudo.txt");
const REFINE_TEMPLATE: &str = include_str!("templates/refine.txt");
const RUBRIC_TEMPLATE: &str = include_str!("templates/rubric.txt");

/// Rubric dimensions, in report order.
pub const RUBRIC_DIMS: [&str; 5] =
    ["grounding", "coverage", "specificity", "coherence", "caution"];

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in pairs {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Call the backend with up to three attempts, bumping temperature by 0.1 on
/// each retry, until `validate` accepts the reply.
pub fn generate_valid<T>(
    client: &dyn GenerationClient,
    prompt: &str,
    params: &GenParams,
    validate: impl Fn(&str) -> Result<T, String>,
) -> Result<T, Error> {
    const ATTEMPTS: usize = 3;
    let mut params = params.clone();
    let mut last_error = String::new();
    for _ in 0..ATTEMPTS {
        match client.generate(prompt, &params) {
            Err(e) => last_error = e.to_string(),
            Ok(reply) => match validate(&reply) {
                Ok(value) => return Ok(value),
                Err(msg) => last_error = format!("invalid reply: {msg}"),
            },
        }
        params.temperature += 0.1;
    }
    Err(Error::GenerationFailed {
        attempts: ATTEMPTS,
        last_error,
    })
}

/// Produce a one-line visual caption for an item title.
pub fn caption_item(
    client: &dyn GenerationClient,
    title: &str,
    params: &GenParams,
) -> Result<String, Error> {
    let prompt = fill(CAPTION_TEMPLATE, &[("title", title)]);
    generate_valid(client, &prompt, params, |reply| {
        let reply = reply.trim();
        if reply.is_empty() || reply.contains('\n') {
            Err("caption must be one non-empty line".into())
        } else {
            Ok(reply.to_string())
        }
    })
}

/// Count `Step <digits>:` markers.
fn count_steps(text: &str) -> usize {
    text.match_indices("Step ")
        .filter(|(i, _)| {
            let rest = &text[i + 5..];
            let digits = rest.chars().take_while(char::is_ascii_digit).count();
            digits > 0 && rest[digits..].starts_with(':')
        })
        .count()
}

/// Draft a taste summary from history captions alone, oldest first. The
/// held-out item cannot appear here: this function is never given it.
pub fn pseudo_cot(
    client: &dyn GenerationClient,
    captions: &[(u32, String)],
    params: &GenParams,
) -> Result<String, Error> {
    let listed: Vec<String> = captions
        .iter()
        .enumerate()
        .map(|(i, (_, c))| format!("{}. {c}", i + 1))
        .collect();
    let prompt = fill(PSEUDO_TEMPLATE, &[("captions", &listed.join("\n"))]);
    generate_valid(client, &prompt, params, |reply| {
        let reply = reply.trim();
        if count_steps(reply) < 2 {
            Err("draft must contain at least two numbered steps".into())
        } else {
            Ok(reply.to_string())
        }
    })
}

/// Rewrite a draft using history titles; the reply must end in a `Step 4:`
/// profile sentence.
pub fn refine_cot(
    client: &dyn GenerationClient,
    draft: &str,
    history_titles: &[String],
    params: &GenParams,
) -> Result<String, Error> {
    let listed: Vec<String> = history_titles
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {t}", i + 1))
        .collect();
    let prompt = fill(
        REFINE_TEMPLATE,
        &[("titles", &listed.join("\n")), ("draft", draft)],
    );
    generate_valid(client, &prompt, params, |reply| {
        let reply = reply.trim();
        match extract_profile(reply) {
            Some(_) => Ok(reply.to_string()),
            None => Err("rewrite must end with a non-empty Step 4 profile".into()),
        }
    })
}

/// The profile sentence: everything after the last `Step 4:`.
pub fn extract_profile(refined: &str) -> Option<String> {
    let idx = refined.rfind("Step 4:")?;
    let tail = refined[idx + "Step 4:".len()..].trim();
    if tail.is_empty() {
        None
    } else {
        Some(tail.to_string())
    }
}

/// Mask any `[ITEM_<digits>]` span, case-insensitively.
fn mask_item_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = find_ignore_case(rest, "[item_") {
        let after = &rest[start + "[item_".len()..];
        let digits = after.chars().take_while(char::is_ascii_digit).count();
        if digits > 0 && after[digits..].starts_with(']') {
            out.push_str(&rest[..start]);
            out.push_str("[MASKED]");
            rest = &after[digits + 1..];
        } else {
            // Not a real tag; keep the bracket and move past it.
            out.push_str(&rest[..start + 1]);
            rest = &rest[start + 1..];
        }
    }
    out.push_str(rest);
    out
}

/// Scrub leakage from a record: item tags and every forbidden title (the
/// held-out item and anything after it) are replaced by `[MASKED]`,
/// case-insensitively. History titles are deliberately left alone — they are
/// legitimate inputs. Marks the record sanitized.
pub fn sanitize(record: &mut CoTRecord, forbidden_titles: &[&str]) {
    let scrub = |text: &str| -> String {
        let mut out = mask_item_tags(text);
        for title in forbidden_titles {
            if !title.is_empty() {
                out = replace_ignore_case(&out, title, "[MASKED]");
            }
        }
        out
    };
    record.pseudo_cot = scrub(&record.pseudo_cot);
    record.refined_cot = scrub(&record.refined_cot);
    record.predicted_profile = scrub(&record.predicted_profile);
    record.sanitized = true;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimScore {
    pub score: u8,
    pub evidence: String,
}

/// Rubric grades for one record, keyed by dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricScores {
    pub dims: BTreeMap<String, DimScore>,
}

impl RubricScores {
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.dims.values().map(|d| f64::from(d.score)).sum();
        sum / self.dims.len() as f64
    }
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    // Drop the fence line (which may carry a language tag) and the closer.
    let body = rest.split_once('\n').map(|(_, b)| b).unwrap_or("");
    body.trim().strip_suffix("```").unwrap_or(body).trim()
}

/// Grade a draft/rewrite pair against the five-dimension rubric. The grader
/// must return a JSON object covering every dimension exactly once with
/// scores in {1, 3, 5}; anything else is rejected as malformed.
pub fn score_quality(
    client: &dyn GenerationClient,
    history_titles: &[String],
    record: &CoTRecord,
    params: &GenParams,
) -> Result<RubricScores, Error> {
    let listed: Vec<String> = history_titles
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {t}", i + 1))
        .collect();
    let prompt = fill(
        RUBRIC_TEMPLATE,
        &[
            ("titles", &listed.join("\n")),
            ("draft", &record.pseudo_cot),
            ("rewrite", &record.refined_cot),
        ],
    );
    let reply = client.generate(&prompt, params)?;
    let dims: BTreeMap<String, DimScore> = serde_json::from_str(strip_code_fence(&reply))
        .map_err(|e| Error::MalformedRubric(format!("grader reply is not rubric JSON: {e}")))?;
    for dim in RUBRIC_DIMS {
        let Some(d) = dims.get(dim) else {
            return Err(Error::MalformedRubric(format!("missing dimension {dim:?}")));
        };
        if ![1, 3, 5].contains(&d.score) {
            return Err(Error::MalformedRubric(format!(
                "dimension {dim:?} scored {}, expected 1, 3, or 5",
                d.score
            )));
        }
    }
    if dims.len() != RUBRIC_DIMS.len() {
        let extra: Vec<&str> = dims
            .keys()
            .map(String::as_str)
            .filter(|k| !RUBRIC_DIMS.contains(k))
            .collect();
        return Err(Error::MalformedRubric(format!(
            "unexpected dimensions {extra:?}"
        )));
    }
    Ok(RubricScores { dims })
}

/// Build one record per sequence: caption each distinct history item once
/// (catalog captions are reused verbatim when present), draft from captions,
/// refine with titles, extract the profile. Records come back in input
/// order and are not yet sanitized.
pub fn build_cot_records(
    client: &dyn GenerationClient,
    catalog: &Catalog,
    sequences: &[InteractionSequence],
    history_len: usize,
    params: &GenParams,
) -> Result<Vec<CoTRecord>, Error> {
    let mut caption_cache: BTreeMap<u32, String> = BTreeMap::new();
    let mut records = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let (history, _target) = seq.history_and_target(history_len)?;
        let mut captions = Vec::with_capacity(history.len());
        let mut titles = Vec::with_capacity(history.len());
        for &id in history {
            let item = catalog.require(id, "record construction")?;
            if !caption_cache.contains_key(&id) {
                let caption = match &item.caption {
                    Some(c) => c.clone(),
                    None => caption_item(client, &item.title, params)?,
                };
                caption_cache.insert(id, caption);
            }
            captions.push((id, caption_cache[&id].clone()));
            titles.push(item.title.clone());
        }
        let pseudo = pseudo_cot(client, &captions, params)?;
        let refined = refine_cot(client, &pseudo, &titles, params)?;
        let predicted_profile = extract_profile(&refined).ok_or_else(|| {
            Error::MalformedGeneration("refined summary lost its profile step".into())
        })?;
        records.push(CoTRecord {
            user_id: seq.user_id,
            captions,
            pseudo_cot: pseudo,
            refined_cot: refined,
            predicted_profile,
            sanitized: false,
        });
    }
    Ok(records)
}
