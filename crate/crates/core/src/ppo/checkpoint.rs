//! Training checkpoints: every trainable network plus the critic.
//!
//! Layout of a checkpoint directory:
//!
//! ```text
//! checkpoint.toml           run labels and progress
//! <skill>--<role>.ccrl      one blob per trainable slot
//! critic.ccrl
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rollout::Critic;
use super::train::Method;
use crate::config::{load_toml, to_toml};
use crate::error::{Error, Result};
use crate::numeric::blob;
use crate::policy::PolicyTree;

const META: &str = "checkpoint.toml";
const CRITIC: &str = "critic.ccrl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub skill: String,
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub iteration: u64,
    pub env_steps: u64,
    pub stage: Option<u8>,
}

fn slot_file(skill: &str, role: &str) -> String {
    format!("{skill}--{role}.ccrl")
}

/// Atomically replaces the checkpoint in `dir`.
pub fn save_checkpoint(dir: &Path, meta: &CheckpointMeta, tree: &PolicyTree, critic: &Critic) -> Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = dir.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
    let tmp = parent.join(format!(".{name}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    for i in tree.trainable_slots() {
        let s = &tree.slots()[i];
        let p = tmp.join(slot_file(&s.skill, s.role.file_stem()));
        fs::write(&p, blob::encode(&s.mlp, &s.log_std)).map_err(|e| Error::io(&p, e))?;
    }
    let p = tmp.join(CRITIC);
    fs::write(&p, blob::encode(&critic.mlp, &[])).map_err(|e| Error::io(&p, e))?;
    let p = tmp.join(META);
    fs::write(&p, to_toml(meta)?).map_err(|e| Error::io(&p, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

pub fn checkpoint_exists(dir: &Path) -> bool {
    dir.join(META).is_file()
}

/// Labels and progress of the checkpoint in `dir`.
pub fn checkpoint_meta(dir: &Path) -> Result<CheckpointMeta> {
    load_toml(&dir.join(META))
}

/// Restores every trainable slot of `tree` from `dir` and returns the
/// checkpoint labels and critic.
pub fn load_checkpoint(dir: &Path, tree: &mut PolicyTree) -> Result<(CheckpointMeta, Critic)> {
    let meta = checkpoint_meta(dir)?;
    let slots: Vec<usize> = tree.trainable_slots().collect();
    for i in slots {
        let s = &tree.slots()[i];
        let file = slot_file(&s.skill, s.role.file_stem());
        let p = dir.join(&file);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let b = blob::decode(&bytes, &file)?;
        if b.mlp.spec() != s.mlp.spec() || b.aux.len() != s.log_std.len() {
            return Err(Error::Contract(format!("checkpoint network {file} does not match the policy architecture")));
        }
        let slot = &mut tree.slots_mut()[i];
        slot.mlp = b.mlp;
        slot.log_std = b.aux;
    }
    let p = dir.join(CRITIC);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let critic = Critic {
        mlp: blob::decode(&bytes, CRITIC)?.mlp,
    };
    Ok((meta, critic))
}
