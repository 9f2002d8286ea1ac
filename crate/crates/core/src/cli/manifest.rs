//! Output directory bookkeeping: files written by a command and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// sha256 of the resolved configuration as TOML.
    pub config_hash: String,
    pub config: RunConfig,
    pub started: u64,
    pub finished: u64,
    pub outputs: Vec<OutputFile>,
}

/// Collects the files of one command under the output directory.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` from an in-memory buffer filled by `f`.
    pub fn write(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.dir.join(name);
        fs::File::create(&path)?.write_all(&buf)?;
        self.files.push(OutputFile { path: name.to_string(), sha256: sha256_hex(&buf) });
        Ok(path)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
            w.push(b'\n');
            Ok(())
        })
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, command: &str, config: &RunConfig, started: u64) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: sha256_hex(config.to_toml().as_bytes()),
            config: config.clone(),
            started,
            finished: now(),
            outputs: self.files,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(manifest)
    }
}

pub fn timestamp() -> u64 {
    now()
}
