//! Output formats: pretty JSON with sorted keys, LF-terminated CSV, and the
//! run manifest that accompanies every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mfmil::Dataset;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const DATASET_MANIFEST: &str = "manifest.json";

/// Pretty JSON with object keys in sorted order, newline terminated.
pub fn to_sorted_json<T: Serialize>(value: &T) -> CliResult<String> {
    // serde_json's default map is ordered, so a round trip through Value
    // sorts every object's keys.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_sorted_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

/// Accepts either a dataset manifest or the directory holding one.
pub fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(DATASET_MANIFEST)
    } else {
        p.to_path_buf()
    }
}

pub fn load_dataset(p: &Path) -> CliResult<Dataset> {
    let path = manifest_path(p);
    Dataset::load(&path).map_err(|e| {
        let msg = format!("{}: {e}", path.display());
        if e.is_numerical() {
            CliError::Numerical(msg)
        } else {
            CliError::Data(msg)
        }
    })
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, sufficient to replay the run.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub dataset_hash: Option<String>,
    pub artifact_version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

pub struct Invocation {
    pub args: Vec<String>,
    pub started: Instant,
}

impl Invocation {
    pub fn manifest<C: Serialize>(
        &self,
        config: &C,
        seeds: &[(&str, u64)],
        dataset_hash: Option<String>,
        outputs: &[&Path],
    ) -> CliResult<RunManifest> {
        Ok(RunManifest {
            command: self.args.first().cloned().unwrap_or_default(),
            args: self.args.clone(),
            config: serde_json::to_value(config)?,
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            dataset_hash,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        })
    }
}

/// Manifest path for an output that is a single file rather than a directory.
pub fn sidecar_manifest(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}
