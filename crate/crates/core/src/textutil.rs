//! Small text helpers shared by rendering, parsing, and the leakage scrub.

/// Canonical surface form of an item tag: zero-padded to four digits so the
/// catalog-sized worlds sort and align nicely, wider ids printed in full.
pub fn render_item_tag(id: u32) -> String {
    format!("[ITEM_{id:04}]")
}

/// Parse a full-token item tag (`[ITEM_<digits>]`). Returns `None` unless the
/// whole string matches; leading zeros are fine, values past `u32` are not.
pub fn parse_item_tag(token: &str) -> Option<u32> {
    let inner = token.strip_prefix("[ITEM_")?.strip_suffix(']')?;
    if inner.is_empty() || !inner.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    inner.parse().ok()
}

/// Opening reasoning delimiter as it appears in responses.
pub const THINK_OPEN: &str = "<think>";
/// Closing reasoning delimiter as it appears in responses.
pub const THINK_CLOSE: &str = "</think>";

/// Defuse reasoning delimiters inside free text that will be embedded in a
/// response: `</think>` becomes `<\think>` and `<think>` becomes `<think\>`.
/// Both substitutions keep the text readable while guaranteeing the rendered
/// response has exactly one delimiter pair.
pub fn escape_think_tags(text: &str) -> String {
    text.replace(THINK_CLOSE, "<\\think>").replace(THINK_OPEN, "<think\\>")
}

/// Case-insensitive substring search. Returns the byte offset of the first
/// match of `needle` in `haystack`, comparing ASCII case-insensitively.
pub fn find_ignore_case(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Replace every case-insensitive occurrence of `needle` with `replacement`.
/// Matches are found left to right and do not overlap.
pub fn replace_ignore_case(haystack: &str, needle: &str, replacement: &str) -> String {
    if needle.is_empty() {
        return haystack.to_string();
    }
    let mut out = String::with_capacity(haystack.len());
    let mut rest = haystack;
    while let Some(i) = find_ignore_case(rest, needle) {
        out.push_str(&rest[..i]);
        out.push_str(replacement);
        rest = &rest[i + needle.len()..];
    }
    out.push_str(rest);
    out
}

/// Uppercase the first ASCII letter of each whitespace-separated word.
pub fn capitalize_words(text: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(c) => c.to_ascii_uppercase().to_string() + chars.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}
