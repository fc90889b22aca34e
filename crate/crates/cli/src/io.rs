use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use neuroforge::arch::NetworkSpec;
use neuroforge::prune::ResNetSpec;
use neuroforge::train::{load_cifar10_binary, load_nft_dataset, synth_dataset, Dataset, SynthSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::commands::CliError;

pub const SEED_ENV: &str = "NEUROFORGE_SEED";

/// Seed from the environment, if set.
pub fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| CliError::validation(SEED_ENV, format!("`{v}` is not an unsigned integer: {e}"))),
        Err(_) => Ok(None),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, flag: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(flag, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(flag, format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `.nft` tensor archive, `.json` synthetic dataset description, or CIFAR-10
/// binary (a record file or a directory of batches).
pub fn load_dataset(path: &Path, split_seed: u64) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::validation("--dataset", format!("{} does not exist", path.display())));
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let loaded = match ext {
        "nft" => load_nft_dataset(path, split_seed),
        "json" => {
            let spec: SynthSpec = read_json(path, "--dataset")?;
            synth_dataset(&spec)
        }
        _ => load_cifar10_binary(path),
    };
    loaded.map_err(|e| match e {
        neuroforge::Error::Format(_) | neuroforge::Error::InvalidArgument(_) => {
            CliError::validation("--dataset", e.to_string())
        }
        other => CliError::Runtime(other.into()),
    })
}

#[derive(Debug, Clone)]
pub enum ArchFile {
    Growth(NetworkSpec),
    ResNet(ResNetSpec),
}

pub fn read_arch(path: &Path) -> Result<ArchFile, CliError> {
    let value: serde_json::Value = read_json(path, "--arch")?;
    let invalid = |e: String| CliError::validation("--arch", format!("{}: {e}", path.display()));
    if value.get("stack_filters").is_some() {
        let spec: ResNetSpec = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        spec.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(ArchFile::ResNet(spec))
    } else {
        let spec = NetworkSpec::from_json(&value.to_string()).map_err(|e| invalid(e.to_string()))?;
        Ok(ArchFile::Growth(spec))
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Provenance of one command run, written as `manifest.json` in its output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>, inputs: Vec<PathBuf>) -> Self {
        RunManifest {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs,
            outputs: Vec::new(),
            started_at_unix: unix_now(),
            finished_at_unix: 0,
        }
    }

    pub fn finish(mut self, dir: &Path, outputs: &[&str]) -> Result<()> {
        self.outputs = outputs.iter().map(PathBuf::from).collect();
        self.finished_at_unix = unix_now();
        write_json(&dir.join("manifest.json"), &self)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::validation("--out", format!("{} is not a directory", dir.display())));
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::validation("--out", format!("cannot create {}: {e}", dir.display())))
}
