//! Run manifest: resolved configuration, seed, input paths with content
//! hashes, and timings. Written before any other output so a run can be
//! reproduced from it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub workers: usize,
    pub inputs: Vec<InputRecord>,
    pub config: serde_json::Value,
    pub version: String,
    pub elapsed_seconds: Option<f64>,
}

pub struct ManifestWriter {
    manifest: RunManifest,
    path: PathBuf,
    started: Instant,
}

fn hash_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Hash every regular file under a path (one level of recursion is enough
/// for our dataset layouts), in sorted order.
fn collect_inputs(root: &Path, out: &mut Vec<InputRecord>) -> std::io::Result<()> {
    if root.is_file() {
        out.push(InputRecord {
            path: root.display().to_string(),
            sha256: hash_file(root)?,
        });
        return Ok(());
    }
    if root.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for entry in entries {
            collect_inputs(&entry, out)?;
        }
    }
    Ok(())
}

impl ManifestWriter {
    /// Hash the inputs and write the manifest before any command output.
    pub fn begin(
        command: &str,
        out_dir: &Path,
        seed: u64,
        workers: usize,
        input_paths: &[&Path],
        config: serde_json::Value,
    ) -> anyhow::Result<Self> {
        fs::create_dir_all(out_dir)?;
        let mut inputs = Vec::new();
        for p in input_paths {
            collect_inputs(p, &mut inputs)?;
        }
        let manifest = RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed,
            workers,
            inputs,
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            elapsed_seconds: None,
        };
        let writer = ManifestWriter {
            manifest,
            path: out_dir.join("manifest.json"),
            started: Instant::now(),
        };
        writer.write()?;
        Ok(writer)
    }

    fn write(&self) -> anyhow::Result<()> {
        fs::write(&self.path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    /// Rewrite the manifest with the final timing.
    pub fn finish(mut self) -> anyhow::Result<()> {
        self.manifest.elapsed_seconds = Some(self.started.elapsed().as_secs_f64());
        self.write()
    }
}
