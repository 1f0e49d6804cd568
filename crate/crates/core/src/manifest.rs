//! Run manifests: what went into a command, what came out, and content
//! hashes to check inputs on reuse. Also a per-directory run lock.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{write_file, Orientation};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Hash of a value's canonical JSON form (object keys sorted).
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(sha256_bytes(serde_json::to_string(&v)?.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl ArtifactRef {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(ArtifactRef {
            path: path.to_owned(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub tool_version: String,
    pub created_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<Orientation>,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    #[serde(default)]
    pub config_hashes: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: BTreeMap<String, ArtifactRef>,
    #[serde(default)]
    pub outputs: BTreeMap<String, ArtifactRef>,
    #[serde(default)]
    pub effective_config: serde_json::Value,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(run_id: &str, command: &str) -> Self {
        RunManifest {
            run_id: run_id.to_owned(),
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            orientation: None,
            seeds: BTreeMap::new(),
            config_hashes: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            effective_config: serde_json::Value::Null,
            notes: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.to_owned(), ArtifactRef::of(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.outputs.insert(name.to_owned(), ArtifactRef::of(path)?);
        Ok(())
    }

    /// Records `config` both verbatim and by hash.
    pub fn set_config<T: Serialize>(&mut self, name: &str, config: &T) -> Result<()> {
        self.config_hashes.insert(name.to_owned(), hash_json(config)?);
        if !self.effective_config.is_object() {
            self.effective_config = serde_json::Value::Object(Default::default());
        }
        self.effective_config[name] = serde_json::to_value(config)?;
        Ok(())
    }

    /// Fails if any recorded input or output no longer matches its hash.
    pub fn verify(&self) -> Result<()> {
        for (name, a) in self.inputs.iter().chain(&self.outputs) {
            let now = sha256_file(&a.path)?;
            if now != a.sha256 {
                return Err(Error::InvalidArgument(format!(
                    "artifact `{name}` at {} changed since the run (hash {} != {})",
                    a.path.display(),
                    &now[..12],
                    &a.sha256[..12]
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Exclusive lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidArgument(format!(
                "{} is locked by another run (remove {} if that run died)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
