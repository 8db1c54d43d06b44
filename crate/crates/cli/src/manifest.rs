use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use swlm_core::config::RunConfig;
use swlm_core::{Error, Result};

/// Everything needed to replay a run: the effective configuration, the
/// seed after environment overrides and the program version.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: Option<u64>,
    pub config: &'a BTreeMap<String, String>,
    pub args: BTreeMap<&'a str, String>,
}

pub fn write(path: &Path, command: &str, run: &RunConfig, seed: Option<u64>, args: BTreeMap<&str, String>) -> Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config: run.entries(),
        args,
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Data(format!("manifest: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// `report.csv` -> `report.csv.manifest.json`
pub fn beside(out: &Path) -> std::path::PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
