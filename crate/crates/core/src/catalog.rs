//! Item catalog: the universe of recommendable items.
//!
//! Stored on disk as JSONL, one item per line. Titles are the only required
//! text; captions (short visual descriptions) are attached by the offline
//! data-construction stage or carried as ground truth by synthetic worlds.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: u32,
    pub title: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub caption: Option<String>,
}

/// Immutable, validated collection of items with O(1) id lookup.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<Item>,
    by_id: HashMap<u32, usize>,
}

impl Catalog {
    /// Build a catalog, rejecting duplicate ids, empty titles, and titles
    /// containing newlines (titles must render on one prompt line).
    pub fn new(items: Vec<Item>) -> Result<Self, Error> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            if item.title.trim().is_empty() {
                return Err(Error::InvalidItem {
                    id: item.id,
                    reason: "empty title".into(),
                });
            }
            if item.title.contains('\n') {
                return Err(Error::InvalidItem {
                    id: item.id,
                    reason: "title contains a newline".into(),
                });
            }
            if by_id.insert(item.id, idx).is_some() {
                return Err(Error::DuplicateItem { id: item.id });
            }
        }
        Ok(Catalog { items, by_id })
    }

    /// Items in their original (catalog) order.
    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn get(&self, id: u32) -> Option<&Item> {
        self.by_id.get(&id).map(|&i| &self.items[i])
    }

    /// Like [`Catalog::get`] but an error naming the id and the call site.
    pub fn require(&self, id: u32, context: &str) -> Result<&Item, Error> {
        self.get(id).ok_or_else(|| Error::UnknownItem {
            id,
            context: context.into(),
        })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, Error> {
        let mut items = Vec::new();
        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let item: Item = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: lineno + 1,
                message: e.to_string(),
            })?;
            items.push(item);
        }
        Catalog::new(items)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let file = fs::File::open(path)?;
        Catalog::from_reader(file).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let mut out = Vec::new();
        for item in &self.items {
            serde_json::to_writer(&mut out, item)?;
            out.push(b'\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Write with `.write_all`-style explicit writer (used by tests).
    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<(), Error> {
        for item in &self.items {
            serde_json::to_writer(&mut w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
