//! File-backed artifact store.
//!
//! ```text
//! <data_dir>/
//!   CURRENT                    id of the live snapshot
//!   snapshots/<id>/manifest.json
//!   snapshots/<id>/<artifact>  one file per artifact
//! ```
//!
//! A snapshot id is a prefix of the SHA-256 of its manifest, and the
//! manifest lists each artifact's SHA-256, so equal contents give equal
//! ids. Snapshots are never modified; a commit writes a new directory and
//! then repoints `CURRENT` by rename.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::PipelineError;

/// Artifact names shared by the pipeline stages.
pub mod artifact {
    use crate::risk::ModelKind;

    pub const CLAIMS: &str = "claims.ndjson";
    pub const CCS_MAP: &str = "ccs_map.json";
    pub const COHORT: &str = "cohort.json";
    pub const FEATURES: &str = "features.json";
    pub const SPLIT: &str = "split.json";
    pub const EXPLANATIONS: &str = "explanations.json";
    pub const GUIDELINES: &str = "guidelines.json";
    pub const PARSE_REPORT: &str = "guideline_parse_report.json";

    pub fn model(kind: ModelKind) -> String {
        format!("model-{}.json", kind.to_string().to_ascii_lowercase())
    }

    pub fn metrics(kind: ModelKind) -> String {
        format!("metrics-{}.json", kind.to_string().to_ascii_lowercase())
    }
}

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const CURRENT: &str = "CURRENT";
const ID_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl Manifest {
    fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serialises");
        v.push(b'\n');
        v
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != MANIFEST
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !name.starts_with('.')
}

/// An immutable set of artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub id: String,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Snapshot {
    pub fn has(&self, name: &str) -> bool {
        self.manifest.artifacts.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.artifacts.keys().map(String::as_str)
    }

    /// Raw bytes of an artifact, checked against the manifest hash.
    pub fn read(&self, name: &str) -> Result<Option<Vec<u8>>, PipelineError> {
        let Some(entry) = self.manifest.artifacts.get(name) else {
            return Ok(None);
        };
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(PipelineError::Corrupt { artifact: name.into(), message: "hash mismatch".into() });
        }
        Ok(Some(bytes))
    }
}

/// Handle on a data directory. Commits are serialised by an in-process
/// lock; readers never block.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        let snaps = root.join("snapshots");
        fs::create_dir_all(&snaps).map_err(|e| PipelineError::io(&snaps, e))?;
        Ok(Self { root, write_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn snapshot_dir(&self, id: &str) -> PathBuf {
        self.root.join("snapshots").join(id)
    }

    pub fn current_id(&self) -> Result<Option<String>, PipelineError> {
        let path = self.root.join(CURRENT);
        match fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s.trim().to_string()).filter(|s| !s.is_empty())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }

    pub fn snapshot(&self, id: &str) -> Result<Snapshot, PipelineError> {
        if id.len() != ID_LEN || !id.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(PipelineError::NotFound { what: "snapshot", id: id.into() });
        }
        let dir = self.snapshot_dir(id);
        let path = dir.join(MANIFEST);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(PipelineError::NotFound { what: "snapshot", id: id.into() })
            }
            Err(e) => return Err(PipelineError::io(&path, e)),
        };
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Corrupt { artifact: MANIFEST.into(), message: e.to_string() })?;
        Ok(Snapshot { id: id.into(), dir, manifest })
    }

    /// The live snapshot; an empty one before the first commit.
    pub fn current(&self) -> Result<Snapshot, PipelineError> {
        match self.current_id()? {
            Some(id) => self.snapshot(&id),
            None => Ok(Snapshot {
                id: String::new(),
                dir: PathBuf::new(),
                manifest: Manifest { version: MANIFEST_VERSION, artifacts: BTreeMap::new() },
            }),
        }
    }

    /// Writes a snapshot holding the current artifacts overlaid with
    /// `updates` (and without `removals`), then makes it current.
    pub fn commit(&self, updates: Vec<(String, Vec<u8>)>, removals: &[&str]) -> Result<Snapshot, PipelineError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let base = self.current()?;
        let mut manifest = base.manifest.clone();
        manifest.version = MANIFEST_VERSION;
        for r in removals {
            manifest.artifacts.remove(*r);
        }
        let mut contents: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for (name, bytes) in updates {
            if !valid_name(&name) {
                return Err(PipelineError::Config { path: "artifact".into(), message: format!("bad name `{name}`") });
            }
            manifest
                .artifacts
                .insert(name.clone(), ArtifactEntry { sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
            contents.insert(name, bytes);
        }
        let manifest_bytes = manifest.to_json();
        let id = sha256_hex(&manifest_bytes)[..ID_LEN].to_string();
        let dir = self.snapshot_dir(&id);

        if !dir.join(MANIFEST).exists() {
            let tmp = self.root.join("snapshots").join(format!(".tmp-{id}-{}", std::process::id()));
            if tmp.exists() {
                fs::remove_dir_all(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
            }
            fs::create_dir_all(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
            for name in manifest.artifacts.keys() {
                let dst = tmp.join(name);
                match contents.get(name) {
                    Some(bytes) => fs::write(&dst, bytes).map_err(|e| PipelineError::io(&dst, e))?,
                    None => {
                        let src = base.dir.join(name);
                        fs::copy(&src, &dst).map_err(|e| PipelineError::io(&src, e))?;
                    }
                };
            }
            let mpath = tmp.join(MANIFEST);
            fs::write(&mpath, &manifest_bytes).map_err(|e| PipelineError::io(&mpath, e))?;
            if let Err(e) = fs::rename(&tmp, &dir) {
                // Another process may have produced the identical snapshot.
                let _ = fs::remove_dir_all(&tmp);
                if !dir.join(MANIFEST).exists() {
                    return Err(PipelineError::io(&dir, e));
                }
            }
        }

        let cur_tmp = self.root.join(format!(".{CURRENT}.tmp-{}", std::process::id()));
        fs::write(&cur_tmp, format!("{id}\n")).map_err(|e| PipelineError::io(&cur_tmp, e))?;
        let cur = self.root.join(CURRENT);
        fs::rename(&cur_tmp, &cur).map_err(|e| PipelineError::io(&cur, e))?;
        log::info!("snapshot {id} committed ({} artifacts)", manifest.artifacts.len());
        Ok(Snapshot { id, dir, manifest })
    }
}
