//! Zero-shot object presence prediction from scene context.
//!
//! The pipeline mines scene-object relations from POS-tagged text,
//! turns the relation counts into smoothed per-scene object
//! probabilities, and mixes them with a per-image scene distribution to
//! score the presence of every object in an image — no object-level
//! supervision involved. Evaluation utilities (top-k accuracy, VOC-style
//! average precision over frequency-ranked object sets, chance
//! baselines) and a detection rescorer built on the presence scores
//! round out the toolkit.

pub mod error;
pub mod eval;
pub mod extract;
pub mod ingest;
pub mod matrix;
pub mod predict;
pub mod rescore;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use ingest::{TaggedToken, TripleRecord, Vocabulary};
pub use matrix::ContextMatrix;
pub use predict::{PosteriorTable, PresenceScores};
pub use scene::SceneDistribution;
