//! Report envelope: every JSON report carries the resolved config, its hash,
//! the seeds and digests of the input files, so it can be replayed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{file_digest, ExperimentConfig};
use super::format::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// What a subcommand produced: the JSON body plus side files (CSV, TOML).
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub body: serde_json::Value,
    pub files: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: serde_json::Value,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub inputs: Vec<InputDigest>,
    /// Side files written next to the report.
    pub outputs: Vec<String>,
    /// Wall-clock seconds since the epoch; ignored on replay.
    pub generated_at_unix: u64,
    pub body: serde_json::Value,
}

pub fn digests(paths: &[&Path]) -> Result<Vec<InputDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.to_path_buf(),
                sha256: file_digest(p)?,
            })
        })
        .collect()
}

/// Comment line heading every CSV.
pub fn csv_preamble(command: &str, config: &ExperimentConfig) -> String {
    let seeds: Vec<String> = config.seeds.iter().map(u64::to_string).collect();
    format!(
        "# htsim {command} config_hash={} seeds={}\n",
        config.hash(),
        seeds.join(";")
    )
}

pub fn body_text(body: &serde_json::Value) -> String {
    serde_json::to_string_pretty(body).expect("json values serialize")
}

pub fn envelope(
    command: &str,
    args: serde_json::Value,
    config: &ExperimentConfig,
    extra_inputs: &[&Path],
    output: &CommandOutput,
) -> Result<Envelope> {
    let mut paths = config.input_paths();
    paths.extend_from_slice(extra_inputs);
    let generated_at_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(Envelope {
        tool: "htsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        args,
        config_hash: config.hash(),
        seeds: config.seeds.clone(),
        config: config.clone(),
        inputs: digests(&paths)?,
        outputs: output.files.iter().map(|(n, _)| n.clone()).collect(),
        generated_at_unix,
        body: output.body.clone(),
    })
}

/// Writes `<dir>/<command>.json` and the side files, each atomically.
pub fn write_report(dir: &Path, env: &Envelope, output: &CommandOutput) -> Result<PathBuf> {
    for (name, text) in &output.files {
        write_atomic(&dir.join(name), text.as_bytes())?;
    }
    let path = dir.join(format!("{}.json", env.command));
    let mut text = serde_json::to_string_pretty(env).expect("envelope serializes");
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn read_envelope(path: &Path) -> Result<Envelope> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(e.column() as u64, format!("{}: {e}", path.display())))
}

/// Checks that an envelope's config and inputs are the ones it was made with.
pub fn verify_provenance(env: &Envelope) -> Result<()> {
    if env.config.hash() != env.config_hash {
        return Err(Error::Config(format!(
            "embedded config hashes to {}, report says {}",
            env.config.hash(),
            env.config_hash
        )));
    }
    if env.config.seeds != env.seeds {
        return Err(Error::Config("embedded seeds differ from the config seeds".into()));
    }
    env.config.validate()?;
    for d in &env.inputs {
        let now = file_digest(&d.path)?;
        if now != d.sha256 {
            return Err(Error::Config(format!("input {} changed since the report was made", d.path.display())));
        }
    }
    Ok(())
}
