//! Run manifest: for every command, the hash of its effective settings, the
//! seed, and SHA-256 digests of the files it read and wrote. No timestamps, so
//! identical reruns produce identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub commands: BTreeMap<String, CommandRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandRecord {
    pub config_sha256: String,
    pub seed: u64,
    pub settings: serde_json::Value,
    /// Input path as given → digest.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory → digest.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl CommandRecord {
    /// Settings are hashed in their canonical JSON form.
    pub fn new(seed: u64, settings: serde_json::Value) -> Self {
        CommandRecord {
            config_sha256: sha256_hex(settings.to_string().as_bytes()),
            seed,
            settings,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, run_dir: &Path, path: &Path) -> io::Result<()> {
        let key = path.strip_prefix(run_dir).unwrap_or(path).display().to_string();
        self.outputs.insert(key, sha256_file(path)?);
        Ok(())
    }
}

impl Manifest {
    pub fn load_or_default(run_dir: &Path) -> io::Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(e),
        }
    }

    /// Replace the record for `command` and rewrite the manifest.
    pub fn record(run_dir: &Path, command: &str, record: CommandRecord) -> io::Result<()> {
        let mut m = Self::load_or_default(run_dir)?;
        m.commands.insert(command.to_string(), record);
        let mut text = serde_json::to_string_pretty(&m).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(run_dir.join(MANIFEST_FILE), text)
    }
}
