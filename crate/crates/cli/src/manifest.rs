//! Input tracking, staged atomic output and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Per-stage seed: the run seed xor the leading bytes of the stage name's digest.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let d = Sha256::digest(stage.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&d[..8]);
    seed ^ u64::from_le_bytes(head)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// SHA-256 of every file read, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

/// One command invocation. Outputs are held in memory until [`Run::commit`],
/// so a failed run leaves earlier files untouched.
pub struct Run {
    pub command: &'static str,
    pub seed: u64,
    pub out_dir: PathBuf,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, Vec<u8>>,
    started: u64,
}

impl Run {
    pub fn new(
        command: &'static str,
        seed: u64,
        out_dir: PathBuf,
        config: serde_json::Value,
    ) -> Self {
        Run {
            command,
            seed,
            out_dir,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: unix_ms(),
        }
    }

    pub fn read(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes =
            std::fs::read(path).with_context(|| format!("cannot read input {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), hex_digest(&bytes));
        Ok(bytes)
    }

    /// Records the digest of a file read by a library call.
    pub fn note_input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.read(path).map(drop)
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn stage(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.outputs.insert(name.into(), bytes);
    }

    pub fn stage_json<S: Serialize>(
        &mut self,
        name: impl Into<String>,
        value: &S,
    ) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.stage(name, bytes);
        Ok(())
    }

    /// Writes every staged output through a temp file and rename, then the manifest.
    pub fn commit(self) -> anyhow::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create {}", self.out_dir.display()))?;
        let mut written = Vec::new();
        let mut digests = BTreeMap::new();
        for (name, bytes) in &self.outputs {
            let path = self.out_dir.join(name);
            write_atomic(&path, bytes)?;
            digests.insert(name.clone(), hex_digest(bytes));
            written.push(path);
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: digests,
            started_unix_ms: self.started,
            finished_unix_ms: unix_ms(),
        };
        let path = self.out_dir.join(format!("{}.manifest.json", self.command));
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(written)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
