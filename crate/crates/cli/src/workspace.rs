//! The output directory: a lockfile against concurrent writers and a
//! manifest of every file each command read or wrote.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::failure::Failure;

pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".regent.lock";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Path to SHA-256 digest.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the output directory to SHA-256 digest.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    /// Latest run of each command.
    pub commands: BTreeMap<String, CommandRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Failure::user(format!("{}: {e}", path.display())))
    }
}

pub fn digest_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::internal(format!("{}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub struct Workspace {
    pub dir: PathBuf,
    command: String,
    record: CommandRecord,
    config_hash: String,
}

impl Workspace {
    pub fn open(config: &ExperimentConfig, command: &str) -> Result<Self, Failure> {
        let dir = config.paths.output_dir.clone();
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::user(format!("cannot create output directory {}: {e}", dir.display())))?;
        let lock = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Failure::user(format!(
                    "{} is in use by another run; remove {} if that run is gone",
                    dir.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(e.into()),
        }
        let config_hash = config.hash();
        Ok(Self {
            dir,
            command: command.to_string(),
            record: CommandRecord {
                config_hash: config_hash.clone(),
                started_unix: now(),
                ..CommandRecord::default()
            },
            config_hash,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records an input file and returns its path.
    pub fn input(&mut self, path: &Path) -> Result<PathBuf, Failure> {
        let d = digest_file(path)?;
        self.record.inputs.insert(path.display().to_string(), d);
        Ok(path.to_path_buf())
    }

    /// An artifact from an earlier command; missing ones name that command.
    pub fn require(&mut self, name: &str, producer: &str) -> Result<PathBuf, Failure> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Failure::user(format!(
                "missing {}; run `regent {producer}` first",
                path.display()
            )));
        }
        self.input(&path)
    }

    /// Creates the parent directories of a new artifact and returns its path.
    pub fn output(&self, name: &str) -> Result<PathBuf, Failure> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(path)
    }

    /// Records a written artifact.
    pub fn produced(&mut self, name: &str) -> Result<(), Failure> {
        let d = digest_file(&self.path(name))?;
        self.record.artifacts.insert(name.to_string(), d);
        Ok(())
    }

    pub fn finish(mut self) -> Result<CommandRecord, Failure> {
        self.record.finished_unix = now();
        let mut manifest = Manifest::load(&self.dir)?;
        manifest.config_hash = self.config_hash.clone();
        manifest.commands.insert(self.command.clone(), self.record.clone());
        let tmp = self.dir.join(format!("{MANIFEST}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(&manifest)? + "\n")?;
        std::fs::rename(&tmp, self.dir.join(MANIFEST))?;
        Ok(self.record.clone())
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.dir.join(LOCK));
    }
}
