//! Consistency scoring and mixed-grained filtering of reasoning records.
//!
//! Each user gets two signals: how well their history captions agree with
//! the matching titles (coarse, per-item), and how well the record's
//! predicted profile agrees with the actual next title (fine, predictive).
//! The squashed sum ranks users; a quantile filter keeps the top fraction
//! and only their records are attached to training targets.

mod embed;
mod scoring;

pub use embed::{cosine, Embedder, HashEmbedder, RemoteEmbedder, EMBED_DIM};
pub use scoring::{
    assemble_mix, quantile_filter, read_scores, score_users, write_scores, UserScore,
    SCORES_HEADER,
};
