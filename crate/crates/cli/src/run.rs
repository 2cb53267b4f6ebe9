//! Output directories, run configuration and the reproducibility manifest.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use vsalens::explain::ExplainerConfig;

use crate::args::Command;
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything needed to reproduce a run; written as `run_config.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub threads: Option<usize>,
    #[serde(flatten)]
    pub command: Command,
    /// Resolved explainer settings, when the command uses them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explainer: Option<ExplainerConfig>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool_version: &'a str,
    run_config_sha256: String,
    checkpoint_sha256: Option<String>,
    atom_table_hash: Option<String>,
    /// Seconds since the Unix epoch; the only field that varies between
    /// otherwise identical runs.
    timestamp_unix: u64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Hashes gathered while a command runs, recorded in the manifest.
#[derive(Debug, Default)]
pub struct Provenance {
    pub checkpoint: Option<PathBuf>,
    pub atom_table_hash: Option<String>,
}

pub fn write_manifest(dir: &Path, config: &RunConfig, prov: &Provenance) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_json(&dir.join("run_config.json"), config)?;
    let config_bytes = serde_json::to_vec(config)?;
    let checkpoint_sha256 = prov.checkpoint.as_deref().map(sha256_file).transpose()?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        run_config_sha256: format!("{:x}", Sha256::digest(config_bytes)),
        checkpoint_sha256,
        atom_table_hash: prov.atom_table_hash.clone(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}
