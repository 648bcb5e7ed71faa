//! Content-addressed artifact cache keyed by configuration subsets.
//!
//! Layout: `<root>/<stage set>/<digest>`, where the stage set is the `+`-joined
//! stage names and the digest is the SHA-256 of the canonical serialization of
//! the configuration restricted to those stages. Each file starts with a
//! `sha256:<hex>` line over the payload so a damaged artifact reads as a miss.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use milsweep_core::{Configuration, PipelineSpace, Stage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArtifactKey {
    pub stage_set: String,
    pub digest: String,
    /// Human-readable form of the subconfiguration, e.g. `normalization=B,tile_size=512`.
    pub label: String,
}

impl ArtifactKey {
    pub fn new(space: &PipelineSpace, config: &Configuration, stages: &[Stage]) -> Result<Self> {
        let sub = space.subconfig(config, stages);
        let label = sub
            .entries
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",");
        Ok(ArtifactKey {
            stage_set: stage_set_name(stages),
            digest: sub.digest()?,
            label,
        })
    }
}

pub fn stage_set_name(stages: &[Stage]) -> String {
    stages.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("+")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss,
}

impl Lookup {
    pub fn is_hit(self) -> bool {
        self == Lookup::Hit
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError<E> {
    #[error(transparent)]
    Store(#[from] Error),
    #[error("artifact producer failed: {0}")]
    Producer(E),
}

#[derive(Debug, Default)]
pub struct ArtifactCache {
    root: PathBuf,
    in_flight: Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>,
}

fn payload_digest(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

impl ArtifactCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactCache {
            root: root.into(),
            in_flight: Mutex::default(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &ArtifactKey) -> PathBuf {
        self.root.join(&key.stage_set).join(&key.digest)
    }

    /// Stored payload if present and intact.
    pub fn get(&self, key: &ArtifactKey) -> Option<Vec<u8>> {
        let bytes = fs::read(self.path_for(key)).ok()?;
        let split = bytes.iter().position(|&b| b == b'\n')?;
        let header = std::str::from_utf8(&bytes[..split]).ok()?;
        let payload = &bytes[split + 1..];
        (header.strip_prefix("sha256:")? == payload_digest(payload)).then(|| payload.to_vec())
    }

    /// Writes to a temporary file in the target directory, then renames over
    /// the final path.
    pub fn put(&self, key: &ArtifactKey, payload: &[u8]) -> Result<()> {
        let path = self.path_for(key);
        let dir = path.parent().expect("artifact path has a parent");
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::io(dir))?;
        let write = |f: &mut fs::File| -> std::io::Result<()> {
            writeln!(f, "sha256:{}", payload_digest(payload))?;
            f.write_all(payload)?;
            f.sync_all()
        };
        write(tmp.as_file_mut()).map_err(Error::io(tmp.path()))?;
        tmp.persist(&path).map_err(|e| Error::io(&path)(e.error))?;
        Ok(())
    }

    /// Returns the stored artifact, or runs `producer` and stores its output.
    /// Concurrent callers with the same key within this process serialize on
    /// a per-key lock, so the producer runs at most once per key.
    pub fn get_or_compute<E, F>(&self, key: &ArtifactKey, producer: F) -> Result<(Vec<u8>, Lookup), CacheError<E>>
    where
        F: FnOnce() -> std::result::Result<Vec<u8>, E>,
    {
        let path = self.path_for(key);
        let slot = {
            let mut map = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
            map.entry(path).or_default().clone()
        };
        let _guard = slot.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(bytes) = self.get(key) {
            return Ok((bytes, Lookup::Hit));
        }
        let bytes = producer().map_err(CacheError::Producer)?;
        self.put(key, &bytes)?;
        Ok((bytes, Lookup::Miss))
    }
}
