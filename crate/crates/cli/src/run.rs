//! Run manifests: what was run, on which inputs, with which configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub microseg: &'static str,
    pub checkpoint_format: u32,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    /// Fully resolved configuration (defaults filled in).
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
    pub versions: Versions,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Collects inputs and outputs while a subcommand runs, then writes
/// `run.json` next to the outputs.
pub struct Run {
    out: PathBuf,
    command: String,
    seed: u64,
    threads: usize,
    config: serde_json::Value,
    inputs: Vec<InputRecord>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &str, out: &Path, seed: u64, threads: usize) -> Self {
        Run {
            out: out.to_path_buf(),
            command: command.to_string(),
            seed,
            threads,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(config).context("serializing configuration")?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if self.inputs.iter().any(|r| r.path == path) {
            return Ok(());
        }
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    /// Creates the output directory (and `sub` below it when non-empty).
    pub fn dir(&self, sub: &str) -> Result<PathBuf> {
        let d = if sub.is_empty() {
            self.out.clone()
        } else {
            self.out.join(sub)
        };
        fs::create_dir_all(&d).with_context(|| format!("creating output directory {}", d.display()))?;
        Ok(d)
    }

    /// Path of an output file, recorded relative to the output directory.
    pub fn output(&mut self, relative: impl AsRef<Path>) -> PathBuf {
        let relative = relative.as_ref().to_path_buf();
        let full = self.out.join(&relative);
        self.outputs.push(relative);
        full
    }

    pub fn write(&mut self, relative: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        self.dir("")?;
        let path = self.output(relative);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json(&mut self, relative: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).context("serializing output")?;
        self.write(relative, text + "\n")
    }

    pub fn finish(self) -> Result<()> {
        let canonical = serde_json::to_vec(&self.config).context("serializing configuration")?;
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            seed: self.seed,
            threads: self.threads,
            config_sha256: sha256_bytes(&canonical),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            versions: Versions {
                microseg: env!("CARGO_PKG_VERSION"),
                checkpoint_format: microseg::net::checkpoint::FORMAT_VERSION,
            },
        };
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).context("serializing run manifest")?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
