//! Influence-weighted instruction-data curation.
//!
//! Scores every candidate instruction-response pair by how much it reduces
//! the instruction-following difficulty of semantically related, diverse,
//! and challenging probe examples when used as a one-shot demonstration,
//! then greedily selects a budgeted coreset under a pairwise
//! cosine-similarity diversity constraint. Ships the consistency-analysis
//! and pairwise-judging tooling used to study the scores.

pub mod analysis;
pub mod backends;
pub mod cache;
pub mod corpus;
pub mod difficulty;
pub mod embedding;
pub mod error;
pub mod hash;
pub mod influence;
pub mod parallel;
pub mod probes;
pub mod select;

pub use error::{Error, Result};
