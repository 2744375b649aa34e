//! Skill-graph engine for training-free, self-evolving visual geolocation.
//!
//! The crate covers the full loop: compiling expert trajectories into an
//! initial skill library, hybrid lexical/dense skill retrieval, per-query
//! skill-graph composition, skill-conditioned inference through a pluggable
//! model gateway, symbolic library evolution (synthesis, merging, pruning),
//! and the evaluation metrics used to score predictions.

pub mod error;
pub mod evolution;
pub mod expert_compiler;
pub mod geo_metrics;
pub mod graph_composer;
pub mod inference_engine;
pub mod model_gateway;
pub mod retrieval;
pub mod skill_model;
pub mod text;

#[cfg(any(test, feature = "fixtures"))]
pub mod fixtures;

pub use error::LibraryError;
pub use skill_model::{AtomicSkill, GeoCoordinate, SkillLibrary, Stage};
