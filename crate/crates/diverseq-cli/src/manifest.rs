//! Run manifests: enough to re-run a subcommand and check its outputs.
//!
//! A manifest is written next to the primary output as
//! `<output>.manifest.json` and records the subcommand, the full
//! configuration echo, the seed, the toolkit version, and FNV-1a digests of
//! every input and output file. Re-running with the same configuration
//! produces byte-identical outputs and therefore identical digests; nothing
//! time- or host-dependent goes in.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    digest: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    subcommand: String,
    version: String,
    seed: u64,
    config: Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(subcommand: &str, seed: u64, config: Value) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(digest_file(path)?);
        Ok(())
    }

    /// Write `<primary>.manifest.json`.
    pub fn write(&self, primary_output: &Path) -> Result<PathBuf> {
        let mut name = primary_output.file_name().unwrap_or_default().to_owned();
        name.push(".manifest.json");
        let path = primary_output.with_file_name(name);
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, body)?;
        Ok(path)
    }
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path)?;
    Ok(FileDigest {
        path: path.display().to_string(),
        digest: format!("fnv1a64:{:016x}", fnv1a64(&bytes)),
    })
}

/// FNV-1a, 64-bit. A stable content fingerprint, not a cryptographic hash.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
