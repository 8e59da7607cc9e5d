//! Directory-backed store of trained skills.
//!
//! Layout:
//!
//! ```text
//! <library>/library.toml          version = 1
//! <library>/<skill>/manifest.toml human-readable manifest
//! <library>/<skill>/<role>.ccrl   one parameter blob per network
//! <library>/<skill>.lock          present while a writer holds the skill
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::SkillDecl;
use crate::config::{load_toml, to_toml};
use crate::env::TaskKind;
use crate::error::{Error, Result};
use crate::numeric::blob::{self, NetworkBlob};
use crate::policy::{NetRole, NetSlot};

pub const LIBRARY_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";
const VERSION_FILE: &str = "library.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub file: String,
    /// First 8 bytes of the file's SHA-256, as 16 hex digits.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub id: String,
    pub task: TaskKind,
    pub parents: Vec<String>,
    pub goal_dim: usize,
    pub goal_range: f64,
    pub hidden: Vec<usize>,
    /// Training method that produced the record (e.g. `ccrl`, `vanilla`).
    pub method: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub env_steps: u64,
    pub iterations: u64,
    pub final_success: f64,
    pub blobs: BTreeMap<String, BlobEntry>,
}

impl Manifest {
    /// Manifest skeleton for `decl`; training fills in the run fields.
    pub fn for_skill(decl: &SkillDecl, hidden: Vec<usize>, method: &str) -> Self {
        Manifest {
            id: decl.id.clone(),
            task: decl.task,
            parents: decl.parents.clone(),
            goal_dim: decl.resolved_goal_dim(),
            goal_range: decl.resolved_goal_range(),
            hidden,
            method: method.to_string(),
            seeds: Vec::new(),
            config_hash: String::new(),
            env_steps: 0,
            iterations: 0,
            final_success: 0.0,
            blobs: BTreeMap::new(),
        }
    }
}

/// A trained skill: manifest plus one encoded blob per network role.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillRecord {
    pub manifest: Manifest,
    pub blobs: BTreeMap<String, Vec<u8>>,
}

fn file_checksum(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

impl SkillRecord {
    /// Encodes `slots` (one per role) and fills the manifest blob table.
    pub fn from_slots(mut manifest: Manifest, slots: &[&NetSlot]) -> Self {
        let mut blobs = BTreeMap::new();
        manifest.blobs.clear();
        for s in slots {
            let stem = s.role.file_stem().to_string();
            let bytes = blob::encode(&s.mlp, &s.log_std);
            manifest.blobs.insert(
                stem.clone(),
                BlobEntry {
                    file: format!("{stem}.ccrl"),
                    checksum: format!("{:016x}", file_checksum(&bytes)),
                },
            );
            blobs.insert(stem, bytes);
        }
        SkillRecord { manifest, blobs }
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn network(&self, role: NetRole) -> Result<NetworkBlob> {
        let stem = role.file_stem();
        let bytes = self
            .blobs
            .get(stem)
            .ok_or_else(|| Error::Contract(format!("skill `{}` has no {stem} network", self.id())))?;
        blob::decode(bytes, &format!("{}/{stem}", self.id()))
    }

    /// Rebuilds a frozen slot for `role`.
    pub fn slot(&self, role: NetRole) -> Result<NetSlot> {
        let b = self.network(role)?;
        Ok(NetSlot {
            skill: self.id().to_string(),
            role,
            mlp: b.mlp,
            log_std: b.aux,
            trainable: false,
        })
    }

    pub fn is_root(&self) -> bool {
        self.manifest.parents.is_empty()
    }

    /// Checksum of every blob, keyed by role.
    pub fn checksums(&self) -> BTreeMap<String, u64> {
        self.blobs.iter().map(|(k, v)| (k.clone(), file_checksum(v))).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VersionFile {
    version: u32,
}

#[derive(Debug, Clone)]
pub struct SkillLibrary {
    root: PathBuf,
}

/// Exclusive write lock on one skill; removed on drop.
struct SkillLock {
    path: PathBuf,
}

impl Drop for SkillLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl SkillLibrary {
    /// Opens the library at `root`, creating it if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let vf = root.join(VERSION_FILE);
        if vf.exists() {
            let v: VersionFile = load_toml(&vf)?;
            if v.version != LIBRARY_VERSION {
                return Err(Error::Config(format!(
                    "library version {} is not supported (expected {LIBRARY_VERSION})",
                    v.version
                )));
            }
        } else {
            let text = to_toml(&VersionFile {
                version: LIBRARY_VERSION,
            })?;
            fs::write(&vf, text).map_err(|e| Error::io(&vf, e))?;
        }
        Ok(SkillLibrary { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn skill_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.skill_dir(id).join(MANIFEST).is_file()
    }

    /// Ids of every stored skill, sorted.
    pub fn ids(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if !name.starts_with('.') && self.contains(&name) {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }

    fn lock(&self, id: &str) -> Result<SkillLock> {
        let path = self.root.join(format!("{id}.lock"));
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::Contract(format!("skill `{id}` is locked by another writer ({})", path.display()))
                } else {
                    Error::io(&path, e)
                }
            })?;
        Ok(SkillLock { path })
    }

    /// Writes `record`. An existing skill is only replaced with `overwrite`.
    pub fn save(&self, record: &SkillRecord, overwrite: bool) -> Result<()> {
        let id = record.id();
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(Error::Config(format!("`{id}` is not a valid skill id")));
        }
        let _lock = self.lock(id)?;
        let dir = self.skill_dir(id);
        if self.contains(id) && !overwrite {
            return Err(Error::Duplicate(id.to_string()));
        }
        let tmp = self.root.join(format!(".{id}.tmp"));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        for (stem, entry) in &record.manifest.blobs {
            let bytes = record
                .blobs
                .get(stem)
                .ok_or_else(|| Error::Contract(format!("manifest lists `{stem}` but the record has no such blob")))?;
            let p = tmp.join(&entry.file);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        let mp = tmp.join(MANIFEST);
        fs::write(&mp, to_toml(&record.manifest)?).map_err(|e| Error::io(&mp, e))?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
        Ok(())
    }

    /// Reads a skill and verifies every blob checksum.
    pub fn load(&self, id: &str) -> Result<SkillRecord> {
        if !self.contains(id) {
            return Err(Error::NotFound(id.to_string()));
        }
        let dir = self.skill_dir(id);
        let manifest: Manifest = load_toml(&dir.join(MANIFEST))?;
        if manifest.id != id {
            return Err(Error::Contract(format!(
                "manifest in `{}` names skill `{}`",
                dir.display(),
                manifest.id
            )));
        }
        let mut blobs = BTreeMap::new();
        for (stem, entry) in &manifest.blobs {
            let p = dir.join(&entry.file);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let stored = u64::from_str_radix(&entry.checksum, 16)
                .map_err(|_| Error::Config(format!("bad checksum `{}` in {}", entry.checksum, p.display())))?;
            let computed = file_checksum(&bytes);
            if stored != computed {
                return Err(Error::Corruption {
                    what: p.display().to_string(),
                    stored,
                    computed,
                });
            }
            blobs.insert(stem.clone(), bytes);
        }
        let record = SkillRecord { manifest, blobs };
        // Decoding validates the embedded checksum and layer table as well.
        for stem in record.blobs.keys() {
            blob::decode(&record.blobs[stem], stem)?;
        }
        Ok(record)
    }
}
