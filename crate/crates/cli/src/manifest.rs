use std::path::{Path, PathBuf};

use eqlab_core::format::{format_version, json_hash};
use eqlab_core::Result;
use serde::Serialize;
use serde_json::Value;

/// Record of one CLI run: enough to reproduce every non-timing output.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub format_version: String,
    pub config: Value,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seeds: Vec<u64>,
}

impl RunManifest {
    pub fn new<C: Serialize>(
        subcommand: &str,
        config: &C,
        inputs: &[&Path],
        outputs: &[&Path],
        seeds: &[u64],
    ) -> Self {
        let config = serde_json::to_value(config).expect("configs serialize to JSON");
        RunManifest {
            subcommand: subcommand.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            format_version: format_version(),
            config_hash: json_hash(&config),
            config,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            seeds: seeds.to_vec(),
        }
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }

    /// Path of the manifest that sits next to `out`.
    pub fn path_for(out: &Path) -> PathBuf {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = Self::path_for(out);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// `out` with `suffix` appended to its file name.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
