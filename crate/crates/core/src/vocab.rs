//! Word-level vocabulary with reserved special tokens and one token per item.
//!
//! Layout is fixed: six specials first, then item tokens in catalog order,
//! then lowercased words sorted lexicographically. The on-disk format is one
//! token string per line; the line number (from zero) is the token id, so the
//! file is both human-readable and self-describing.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::catalog::Catalog;
use crate::error::Error;
use crate::textutil::{parse_item_tag, render_item_tag};

/// Ids of the reserved tokens. These are stable across every vocabulary.
pub mod special {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const THINK_OPEN: usize = 4;
    pub const THINK_CLOSE: usize = 5;
    pub const COUNT: usize = 6;

    pub const STRINGS: [&str; COUNT] = ["<pad>", "<bos>", "<eos>", "<unk>", "<think>", "</think>"];
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
    /// Token ids of item tags, keyed by item id.
    item_tokens: HashMap<u32, usize>,
    n_items: usize,
}

impl Vocabulary {
    /// Build from a catalog and a text corpus. Item tags get one token each
    /// (catalog order); corpus words are lowercased, deduplicated, and sorted.
    pub fn build<'a, I>(catalog: &Catalog, corpus: I) -> Vocabulary
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut words = BTreeSet::new();
        for text in corpus {
            for piece in text.split_whitespace() {
                let lower = piece.to_lowercase();
                if special::STRINGS.contains(&lower.as_str()) || parse_item_tag(&lower).is_some() {
                    continue;
                }
                words.insert(lower);
            }
        }
        let mut tokens: Vec<String> = special::STRINGS.iter().map(|s| s.to_string()).collect();
        for item in catalog.items() {
            tokens.push(render_item_tag(item.id));
        }
        tokens.extend(words);
        Vocabulary::from_tokens(tokens, catalog.len()).expect("constructed layout is valid")
    }

    fn from_tokens(tokens: Vec<String>, n_items: usize) -> Result<Vocabulary, Error> {
        let mut lookup = HashMap::with_capacity(tokens.len());
        let mut item_tokens = HashMap::new();
        for (id, tok) in tokens.iter().enumerate() {
            if lookup.insert(tok.clone(), id).is_some() {
                return Err(Error::MalformedVocab(format!("duplicate token {tok:?}")));
            }
            if id >= special::COUNT && id < special::COUNT + n_items {
                let item_id = parse_item_tag(tok).ok_or_else(|| {
                    Error::MalformedVocab(format!("token {tok:?} at id {id} is not an item tag"))
                })?;
                item_tokens.insert(item_id, id);
            }
        }
        Ok(Vocabulary {
            tokens,
            lookup,
            item_tokens,
            n_items,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token id of an item's tag, if the item was in the build catalog.
    pub fn item_token(&self, item_id: u32) -> Option<usize> {
        self.item_tokens.get(&item_id).copied()
    }

    /// Inverse of [`Vocabulary::item_token`].
    pub fn item_id_of(&self, token_id: usize) -> Option<u32> {
        if token_id >= special::COUNT && token_id < special::COUNT + self.n_items {
            parse_item_tag(&self.tokens[token_id])
        } else {
            None
        }
    }

    /// Tokenize: split on whitespace; exact matches (specials, canonical item
    /// tags) first, then any-width item tags, then lowercased word lookup,
    /// then the unknown token.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|piece| {
                if let Some(&id) = self.lookup.get(piece) {
                    return id;
                }
                if let Some(item_id) = parse_item_tag(piece) {
                    if let Some(id) = self.item_token(item_id) {
                        return id;
                    }
                }
                self.lookup
                    .get(&piece.to_lowercase())
                    .copied()
                    .unwrap_or(special::UNK)
            })
            .collect()
    }

    /// Render token ids back to text, space-separated. Unknown ids render as
    /// the unknown token so decoding never panics on model output.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(special::STRINGS[special::UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Load a vocabulary file, re-deriving the item range from the layout:
    /// specials must come first, then a contiguous run of item tags.
    pub fn load(path: &Path) -> Result<Vocabulary, Error> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < special::COUNT {
            return Err(Error::MalformedVocab(format!(
                "only {} tokens; the {} reserved tokens are required",
                tokens.len(),
                special::COUNT
            )));
        }
        for (id, expected) in special::STRINGS.iter().enumerate() {
            if tokens[id] != *expected {
                return Err(Error::MalformedVocab(format!(
                    "token id {id} is {:?}, expected {expected:?}",
                    tokens[id]
                )));
            }
        }
        let n_items = tokens[special::COUNT..]
            .iter()
            .take_while(|t| parse_item_tag(t).is_some())
            .count();
        // No item tags may appear after the item block.
        if let Some(stray) = tokens[special::COUNT + n_items..]
            .iter()
            .find(|t| parse_item_tag(t).is_some())
        {
            return Err(Error::MalformedVocab(format!(
                "item tag {stray:?} appears outside the item block"
            )));
        }
        Vocabulary::from_tokens(tokens, n_items)
    }

    pub fn pad(&self) -> usize {
        special::PAD
    }
    pub fn bos(&self) -> usize {
        special::BOS
    }
    pub fn eos(&self) -> usize {
        special::EOS
    }
    pub fn unk(&self) -> usize {
        special::UNK
    }
}
