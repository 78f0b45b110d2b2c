//! Synthetic worlds with known structure.
//!
//! Each world has a fixed set of genres with disjoint word lists. Item
//! titles are drawn from their genre's title words; captions (the stand-in
//! for a visual description) come from a genre's wider visual list, with a
//! per-word corruption probability that swaps in words from other genres.
//! Users are genre mixtures drawn from a Dirichlet prior and their
//! interaction sequences sample items without replacement through the
//! mixture, so preference structure is real and its strength is a knob.
//!
//! Worlds can also fabricate offline reasoning records directly — clean ones
//! whose final profile paraphrases the user's dominant genre, and leaky ones
//! that quote the held-out item's title verbatim — so leakage experiments
//! have exact ground truth.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Item};
use crate::datagen::CoTRecord;
use crate::error::Error;
use crate::rng::{self, salt};
use crate::sequences::InteractionSequence;
use crate::textutil::capitalize_words;

/// Genre stems; none is a prefix of another, so composed words never collide
/// across genres.
const STEMS: [&str; 12] = [
    "nova", "ember", "frost", "tide", "cinder", "gale", "moss", "quartz", "raven", "sol", "vex",
    "drift",
];
/// Suffixes for title words (10 per genre).
const TITLE_SUFFIXES: [&str; 10] = [
    "fall", "wind", "gate", "song", "mark", "veil", "run", "born", "light", "path",
];
/// Extra suffixes for caption-only words (8 per genre).
const VISUAL_SUFFIXES: [&str; 8] = [
    "glow", "haze", "shade", "bloom", "spark", "mist", "grain", "flare",
];

/// Title words of one genre.
pub fn title_words(genre: usize) -> Vec<String> {
    TITLE_SUFFIXES.iter().map(|s| format!("{}{s}", STEMS[genre])).collect()
}

/// Visual vocabulary of one genre: the title words plus caption-only words,
/// so captions and titles of the same genre genuinely share tokens.
pub fn visual_words(genre: usize) -> Vec<String> {
    let mut words = title_words(genre);
    words.extend(VISUAL_SUFFIXES.iter().map(|s| format!("{}{s}", STEMS[genre])));
    words
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_genres: usize,
    pub n_items: usize,
    pub n_users: usize,
    /// Interactions per user (history plus the held-out target).
    pub seq_len: usize,
    /// Per-word caption corruption probability.
    pub eta: f64,
    /// Dirichlet concentration of user genre mixtures.
    pub alpha: f64,
    /// Fraction of users confined to high-corruption items (0 disables the
    /// clean/noisy partition entirely).
    pub noisy_user_fraction: f64,
    /// Corruption probability for the noisy partition's captions.
    pub noisy_eta: f64,
    /// Fraction of fabricated reasoning records that leak the target title.
    pub leaky_cot_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_genres: 8,
            n_items: 50,
            n_users: 200,
            seq_len: 10,
            eta: 0.2,
            alpha: 0.3,
            noisy_user_fraction: 0.0,
            noisy_eta: 0.8,
            leaky_cot_fraction: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_genres == 0 || self.n_genres > STEMS.len() {
            v.push(format!(
                "world.n_genres must be in 1..={}, got {}",
                STEMS.len(),
                self.n_genres
            ));
        }
        if self.n_items == 0 {
            v.push("world.n_items must be positive".into());
        }
        if self.n_users == 0 {
            v.push("world.n_users must be positive".into());
        }
        if self.seq_len < 2 {
            v.push("world.seq_len must be at least 2".into());
        }
        for (name, x) in [
            ("eta", self.eta),
            ("noisy_eta", self.noisy_eta),
            ("noisy_user_fraction", self.noisy_user_fraction),
            ("leaky_cot_fraction", self.leaky_cot_fraction),
        ] {
            if !(0.0..=1.0).contains(&x) || !x.is_finite() {
                v.push(format!("world.{name} must be in [0, 1], got {x}"));
            }
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            v.push(format!("world.alpha must be positive, got {}", self.alpha));
        }
        v
    }
}

/// Ground truth about one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserLabel {
    pub user_id: u32,
    pub dominant_genre: usize,
    /// False when the user is confined to the high-corruption item pool.
    pub clean_captions: bool,
}

/// Ground truth about one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemLabel {
    pub item_id: u32,
    pub genre: usize,
    /// True when the item belongs to the high-corruption pool.
    pub noisy_pool: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LabelLine {
    User(UserLabel),
    Item(ItemLabel),
}

#[derive(Debug, Clone)]
pub struct World {
    pub catalog: Catalog,
    pub sequences: Vec<InteractionSequence>,
    pub user_labels: Vec<UserLabel>,
    pub item_labels: Vec<ItemLabel>,
}

impl World {
    pub fn save_labels(&self, path: &Path) -> Result<(), Error> {
        let mut out = Vec::new();
        for u in &self.user_labels {
            serde_json::to_writer(&mut out, &LabelLine::User(u.clone()))?;
            out.push(b'\n');
        }
        for i in &self.item_labels {
            serde_json::to_writer(&mut out, &LabelLine::Item(i.clone()))?;
            out.push(b'\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

pub fn load_labels(path: &Path) -> Result<(Vec<UserLabel>, Vec<ItemLabel>), Error> {
    let file = fs::File::open(path)?;
    let mut users = Vec::new();
    let mut items = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: lineno + 1,
            message: e.to_string(),
        })? {
            LabelLine::User(u) => users.push(u),
            LabelLine::Item(i) => items.push(i),
        }
    }
    Ok((users, items))
}

fn pick_distinct<'a>(words: &'a [String], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    let mut idx: Vec<usize> = (0..words.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| words[i].as_str()).collect()
}

/// Generate catalog, sequences, and ground-truth labels.
pub fn generate_world(cfg: &WorldConfig, seed: u64) -> Result<World, Error> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidConfig { violations });
    }
    let genre_titles: Vec<Vec<String>> = (0..cfg.n_genres).map(title_words).collect();
    let genre_visuals: Vec<Vec<String>> = (0..cfg.n_genres).map(visual_words).collect();

    // Items: genres round-robin so counts stay balanced; titles unique.
    let mut rng_items = rng::stream(seed, &[salt::WORLD_ITEMS]);
    let mut used_titles = std::collections::HashSet::new();
    let mut items = Vec::with_capacity(cfg.n_items);
    let mut item_labels = Vec::with_capacity(cfg.n_items);
    let noisy_partition = cfg.noisy_user_fraction > 0.0;
    for id in 0..cfg.n_items as u32 {
        let genre = id as usize % cfg.n_genres;
        let mut title = String::new();
        let mut ok = false;
        for _ in 0..200 {
            let n_words = rng_items.random_range(2..=3usize);
            let words = pick_distinct(&genre_titles[genre], n_words, &mut rng_items);
            title = capitalize_words(&words.join(" "));
            if used_titles.insert(title.clone()) {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::InvalidWorld(format!(
                "could not find a distinct title for item {id} (genre {genre})"
            )));
        }
        items.push((id, genre, title));
    }
    // Clean/noisy pools: within each genre, later ids form the noisy pool.
    let mut noisy_items = std::collections::HashSet::new();
    if noisy_partition {
        for g in 0..cfg.n_genres {
            let of_genre: Vec<u32> = items
                .iter()
                .filter(|(_, genre, _)| *genre == g)
                .map(|(id, _, _)| *id)
                .collect();
            let n_noisy = (of_genre.len() as f64 * cfg.noisy_user_fraction).round() as usize;
            for &id in of_genre.iter().rev().take(n_noisy) {
                noisy_items.insert(id);
            }
        }
    }
    let mut catalog_items = Vec::with_capacity(cfg.n_items);
    for (id, genre, title) in items {
        let in_noisy_pool = noisy_items.contains(&id);
        let eta = if in_noisy_pool { cfg.noisy_eta } else { cfg.eta };
        let n_caption = rng_items.random_range(5..=8usize);
        let mut caption_words = Vec::with_capacity(n_caption);
        for _ in 0..n_caption {
            let corrupt = rng_items.random::<f64>() < eta;
            let word = if corrupt && cfg.n_genres > 1 {
                let mut other = rng_items.random_range(0..cfg.n_genres - 1);
                if other >= genre {
                    other += 1;
                }
                let list = &genre_visuals[other];
                list[rng_items.random_range(0..list.len())].clone()
            } else {
                let list = &genre_visuals[genre];
                list[rng_items.random_range(0..list.len())].clone()
            };
            caption_words.push(word);
        }
        catalog_items.push(Item {
            id,
            title,
            caption: Some(caption_words.join(" ")),
        });
        item_labels.push(ItemLabel {
            item_id: id,
            genre,
            noisy_pool: in_noisy_pool,
        });
    }
    let catalog = Catalog::new(catalog_items)?;

    // Noisy users: a seeded shuffle of user ids, first fraction are noisy.
    let mut user_order: Vec<u32> = (0..cfg.n_users as u32).collect();
    {
        let mut rng = rng::stream(seed, &[salt::WORLD_USER]);
        for i in 0..user_order.len() {
            let j = rng.random_range(i..user_order.len());
            user_order.swap(i, j);
        }
    }
    let n_noisy_users = if noisy_partition {
        (cfg.n_users as f64 * cfg.noisy_user_fraction).floor() as usize
    } else {
        0
    };
    let noisy_users: std::collections::HashSet<u32> =
        user_order[..n_noisy_users].iter().copied().collect();

    // Users: a symmetric Dirichlet mixture over genres — sampled as
    // normalized iid Gamma(alpha, 1) draws — then sequence sampling without
    // replacement through the mixture.
    let gamma = Gamma::new(cfg.alpha, 1.0).map_err(|e| {
        Error::InvalidWorld(format!("bad concentration {}: {e}", cfg.alpha))
    })?;
    let mut sequences = Vec::with_capacity(cfg.n_users);
    let mut user_labels = Vec::with_capacity(cfg.n_users);
    for user_id in 0..cfg.n_users as u32 {
        let is_noisy = noisy_users.contains(&user_id);
        let mut rng = rng::stream(seed, &[salt::WORLD_USER, u64::from(user_id)]);
        let mut mixture: Vec<f64> = (0..cfg.n_genres).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = mixture.iter().sum();
        if total > 0.0 {
            for w in &mut mixture {
                *w /= total;
            }
        } else {
            // All Gamma draws underflowed (possible at tiny alpha); fall
            // back to a uniform mixture rather than dividing by zero.
            mixture = vec![1.0 / cfg.n_genres as f64; cfg.n_genres];
        }
        let dominant = mixture
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(g, _)| g)
            .expect("non-empty mixture");
        // Items available to this user, grouped by genre.
        let mut pools: Vec<Vec<u32>> = vec![Vec::new(); cfg.n_genres];
        for label in &item_labels {
            if !noisy_partition || label.noisy_pool == is_noisy {
                pools[label.genre].push(label.item_id);
            }
        }
        let available: usize = pools.iter().map(Vec::len).sum();
        if available < cfg.seq_len {
            return Err(Error::InvalidWorld(format!(
                "user {user_id} can reach only {available} items but sequences need {}",
                cfg.seq_len
            )));
        }
        let mut item_ids = Vec::with_capacity(cfg.seq_len);
        for _ in 0..cfg.seq_len {
            let weights: Vec<f64> = pools
                .iter()
                .zip(&mixture)
                .map(|(pool, &w)| if pool.is_empty() { 0.0 } else { w })
                .collect();
            let total: f64 = weights.iter().sum();
            let genre = if total <= 0.0 {
                // The mixture's mass sits entirely on exhausted genres; fall
                // back to uniform over genres that still have items.
                let open: Vec<usize> =
                    (0..cfg.n_genres).filter(|&g| !pools[g].is_empty()).collect();
                open[rng.random_range(0..open.len())]
            } else {
                let mut draw = rng.random::<f64>() * total;
                let mut chosen = cfg.n_genres - 1;
                for (g, &w) in weights.iter().enumerate() {
                    if draw < w {
                        chosen = g;
                        break;
                    }
                    draw -= w;
                }
                // Guard against accumulated rounding picking an empty pool.
                if pools[chosen].is_empty() {
                    let open: Vec<usize> =
                        (0..cfg.n_genres).filter(|&g| !pools[g].is_empty()).collect();
                    chosen = open[rng.random_range(0..open.len())];
                }
                chosen
            };
            let pick = rng.random_range(0..pools[genre].len());
            item_ids.push(pools[genre].swap_remove(pick));
        }
        sequences.push(InteractionSequence { user_id, item_ids });
        user_labels.push(UserLabel {
            user_id,
            dominant_genre: dominant,
            clean_captions: !is_noisy,
        });
    }
    Ok(World {
        catalog,
        sequences,
        user_labels,
        item_labels,
    })
}

/// Connectors used when fabricating profile text; none is a genre word, so a
/// fabricated profile never contains two adjacent title words (and therefore
/// never contains any item title as a substring).
const CONNECTORS: [&str; 4] = ["and", "with", "plus", "over"];

/// Fabricate offline reasoning records for every user. Clean records end
/// with a Step 4 profile built from the user's dominant-genre words; leaky
/// records additionally quote the held-out target's title verbatim inside
/// Step 4. Records are marked unsanitized; the leakage scrub is a separate,
/// explicit stage.
pub fn generate_cots(
    world: &World,
    cfg: &WorldConfig,
    history_len: usize,
    seed: u64,
) -> Result<Vec<CoTRecord>, Error> {
    let mut records = Vec::with_capacity(world.sequences.len());
    for (seq, label) in world.sequences.iter().zip(&world.user_labels) {
        debug_assert_eq!(seq.user_id, label.user_id);
        let (history, target) = seq.history_and_target(history_len)?;
        let mut rng = rng::stream(seed, &[salt::COT, u64::from(seq.user_id)]);
        let leaky = rng.random::<f64>() < cfg.leaky_cot_fraction;
        let mut captions = Vec::with_capacity(history.len());
        let mut caption_words: Vec<String> = Vec::new();
        for &id in history {
            let item = world.catalog.require(id, "reasoning record history")?;
            let caption = item.caption.clone().ok_or_else(|| Error::InvalidItem {
                id,
                reason: "item has no caption".into(),
            })?;
            caption_words.extend(caption.split_whitespace().map(str::to_string));
            captions.push((id, caption));
        }
        let word = |rng: &mut ChaCha8Rng| -> String {
            caption_words[rng.random_range(0..caption_words.len())].clone()
        };
        let pseudo_cot = format!(
            "Step 1: the early picks circle {} {} {} textures. Step 2: later picks bring in {} {} {}. Step 3: the common thread is {}.",
            word(&mut rng),
            CONNECTORS[rng.random_range(0..CONNECTORS.len())],
            word(&mut rng),
            word(&mut rng),
            CONNECTORS[rng.random_range(0..CONNECTORS.len())],
            word(&mut rng),
            word(&mut rng),
        );
        let genre_words = title_words(label.dominant_genre);
        let profile_words = pick_distinct(&genre_words, 3, &mut rng);
        let profile_core = format!(
            "a viewer drawn to {} {} {} moods {} a taste for {}",
            profile_words[0],
            CONNECTORS[rng.random_range(0..CONNECTORS.len())],
            profile_words[1],
            CONNECTORS[rng.random_range(0..CONNECTORS.len())],
            profile_words[2],
        );
        let step4 = if leaky {
            let target_title = world.catalog.require(target, "reasoning record target")?.title.clone();
            format!("{profile_core}; the obvious next pick is {target_title}.")
        } else {
            format!("{profile_core}.")
        };
        let refined_cot = format!(
            "Step 1: the viewing run opens on {0} tones. Step 2: the middle stretch keeps {1} close. Step 3: the signal agrees across both views. Step 4: {step4}",
            word(&mut rng),
            word(&mut rng),
        );
        let predicted_profile = step4.clone();
        records.push(CoTRecord {
            user_id: seq.user_id,
            captions,
            pseudo_cot,
            refined_cot,
            predicted_profile,
            sanitized: false,
        });
    }
    Ok(records)
}
