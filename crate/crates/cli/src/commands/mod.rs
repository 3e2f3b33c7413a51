pub mod cv;
pub mod fit;
pub mod predict;
pub mod report;
pub mod simulate;

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Provenance written next to every command's outputs.
#[derive(Debug, Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    software_version: &'a str,
    seed: u64,
}

pub(crate) fn prepare_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Echoes the resolved configuration, software version and seed into `dir`.
pub(crate) fn write_run_info(dir: &Path, command: &str, seed: u64, cfg: &RunConfig) -> CliResult<()> {
    let mut cfg = cfg.clone();
    cfg.seed = Some(seed);
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| CliError::io(&path, e))?;
    let info = RunInfo {
        command,
        software_version: env!("CARGO_PKG_VERSION"),
        seed,
    };
    let path = dir.join("run.json");
    let text = serde_json::to_string_pretty(&info).map_err(|e| CliError::io(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}
