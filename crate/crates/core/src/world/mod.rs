//! Deterministic text-game worlds.
//!
//! A world is declared in a structured text file (locations, objects, action
//! templates, tasks), loaded and validated into a [`WorldSpec`], and played
//! through [`EpisodeState`]. Everything an agent sees is regenerated from the
//! episode state, so identical (task, variation, seed) runs are bit-identical.

mod engine;
mod file;

pub use engine::{
    enumerate_reachable, format_score, EpisodeState, StepResult, REFUSAL_TEXT, STEP_LIMIT,
};
pub use file::{
    load_world, load_world_str, Fraction, Location, ObjectDef, Placement, PowerKind, Predicate,
    State, Subgoal, TaskDef, Template, Variation, Verb, WorldSpec,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("{context}: {detail}")]
    Validate { context: String, detail: String },
    #[error("unknown task '{id}'")]
    UnknownTask { id: String },
    #[error("task '{task}' has {count} variations, requested {variation}")]
    UnknownVariation { task: String, variation: usize, count: usize },
    #[error("episode is finished")]
    EpisodeDone,
}

/// Bundled fixture worlds, compiled into the crate.
pub mod fixtures {
    use super::{load_world_str, WorldError, WorldSpec};
    use std::sync::Arc;

    pub const MINI_SCIENCE: &str = include_str!("../../worlds/mini_science.world");
    pub const CHAIN: &str = include_str!("../../worlds/chain.world");

    pub fn mini_science() -> Result<Arc<WorldSpec>, WorldError> {
        load_world_str(MINI_SCIENCE, "mini_science.world")
    }

    pub fn chain() -> Result<Arc<WorldSpec>, WorldError> {
        load_world_str(CHAIN, "chain.world")
    }

    /// Resolve a CLI world argument: a bundled fixture name or a file path.
    pub fn by_name_or_path(arg: &str) -> Result<Arc<WorldSpec>, WorldError> {
        match arg {
            "mini_science" => mini_science(),
            "chain" => chain(),
            path => super::load_world(std::path::Path::new(path)),
        }
    }
}
