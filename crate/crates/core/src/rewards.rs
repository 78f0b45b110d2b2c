//! Rule-based reward: response grammar check plus target hit.
//!
//! A response must be `[ITEM_<digits>] Title`, optionally followed by exactly
//! one `<think> ... </think>` block, with nothing after the closing
//! delimiter. Malformed responses score -1.0; well-formed ones score 0.3 plus
//! 1.0 when the item id equals the target. The only possible totals are
//! -1.0, 0.3, and 1.3. Scoring never consults the catalog, so its cost is
//! independent of catalog size; title verification against the catalog is a
//! separate diagnostic.

use crate::catalog::Catalog;
use crate::textutil::{THINK_CLOSE, THINK_OPEN};

pub const FORMAT_REWARD: f64 = 0.3;
pub const HIT_REWARD: f64 = 1.0;
pub const MALFORMED_REWARD: f64 = -1.0;

/// Structural reading of a response. Fields are filled as far as parsing
/// got, so a malformed response may still expose the id it led with.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub format_valid: bool,
    pub item_id: Option<u32>,
    pub title: Option<String>,
    pub think: Option<String>,
}

impl ParsedResponse {
    fn malformed(item_id: Option<u32>) -> ParsedResponse {
        ParsedResponse {
            format_valid: false,
            item_id,
            title: None,
            think: None,
        }
    }
}

/// Parse a raw sampled response (delimiter tokens already rendered as text).
///
/// With `require_think`, a response without a reasoning block is malformed;
/// by default the block is optional.
pub fn parse_response(text: &str, require_think: bool) -> ParsedResponse {
    let text = text.trim();
    // Leading item tag.
    let Some(after_prefix) = text.strip_prefix("[ITEM_") else {
        return ParsedResponse::malformed(None);
    };
    let Some(bracket) = after_prefix.find(']') else {
        return ParsedResponse::malformed(None);
    };
    let digits = &after_prefix[..bracket];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return ParsedResponse::malformed(None);
    }
    let Ok(item_id) = digits.parse::<u32>() else {
        return ParsedResponse::malformed(None);
    };
    let rest = &after_prefix[bracket + 1..];
    // The title must be separated from the tag by whitespace.
    if !rest.starts_with(|c: char| c.is_whitespace()) {
        return ParsedResponse::malformed(Some(item_id));
    }

    let (title_region, think) = match rest.find(THINK_OPEN) {
        None => (rest, None),
        Some(open) => {
            let body_region = &rest[open + THINK_OPEN.len()..];
            let Some(close) = body_region.find(THINK_CLOSE) else {
                // Opened but never closed.
                return ParsedResponse::malformed(Some(item_id));
            };
            let after = &body_region[close + THINK_CLOSE.len()..];
            if !after.trim().is_empty() {
                // Anything after the closing delimiter invalidates the response.
                return ParsedResponse::malformed(Some(item_id));
            }
            (&rest[..open], Some(body_region[..close].trim().to_string()))
        }
    };
    let title = title_region.trim();
    if title.is_empty() {
        return ParsedResponse::malformed(Some(item_id));
    }
    if title.contains(THINK_CLOSE) {
        // A stray closing delimiter before any opening one.
        return ParsedResponse::malformed(Some(item_id));
    }
    if require_think && think.is_none() {
        return ParsedResponse::malformed(Some(item_id));
    }
    ParsedResponse {
        format_valid: true,
        item_id: Some(item_id),
        title: Some(title.to_string()),
        think,
    }
}

/// Reward components for one response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub format: f64,
    pub hit: f64,
    pub total: f64,
}

/// Score a parsed response against the target id. A hit is id equality
/// alone; the title text plays no role here.
pub fn score(parsed: &ParsedResponse, target_id: u32) -> RewardBreakdown {
    if !parsed.format_valid {
        return RewardBreakdown {
            format: MALFORMED_REWARD,
            hit: 0.0,
            total: MALFORMED_REWARD,
        };
    }
    let hit = if parsed.item_id == Some(target_id) {
        HIT_REWARD
    } else {
        0.0
    };
    RewardBreakdown {
        format: FORMAT_REWARD,
        hit,
        total: FORMAT_REWARD + hit,
    }
}

/// Convenience: parse then score.
pub fn score_response(text: &str, target_id: u32, require_think: bool) -> RewardBreakdown {
    score(&parse_response(text, require_think), target_id)
}

/// Diagnostic check: does the stated title match the catalog title for the
/// stated id? `None` when the response is malformed or the id is unknown.
/// Kept separate from [`score`] so reward totals stay a pure function of the
/// response and target.
pub fn title_matches(parsed: &ParsedResponse, catalog: &Catalog) -> Option<bool> {
    let id = parsed.item_id?;
    let title = parsed.title.as_deref()?;
    if !parsed.format_valid {
        return None;
    }
    let item = catalog.get(id)?;
    Some(item.title.trim() == title)
}
