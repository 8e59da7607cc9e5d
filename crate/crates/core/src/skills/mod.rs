//! Skill graph, persisted skill library and policy assembly.

pub mod assemble;
pub mod graph;
pub mod library;

pub use assemble::{assemble_flat, assemble_policy, assemble_scratch, top_slots, Init};
pub use graph::{default_penalties, validate_graph, SkillDecl, SkillGraph, Violation, DEFAULT_GRAPH_TOML};
pub use library::{BlobEntry, Manifest, SkillLibrary, SkillRecord, LIBRARY_VERSION};
