use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use jring::config::RunConfig;

use crate::commands::Failure;

/// An input file and the SHA-256 of its contents.
#[derive(Debug, Clone, Serialize)]
pub struct Input {
    pub path: PathBuf,
    pub sha256: String,
}

impl Input {
    pub fn new(path: &Path, contents: &str) -> Self {
        Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
        }
    }
}

pub fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Everything needed to reproduce an output: tool version, command, the
/// effective configuration and hashes of every input file.
pub fn provenance(command: &str, cfg: &RunConfig, inputs: &[Input]) -> Value {
    json!({
        "tool": "jring",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "inputs": inputs,
        "config": cfg,
    })
}

/// `value` (an object) with a `provenance` member added.
pub fn with_provenance(mut value: Value, provenance: &Value) -> Value {
    if let Value::Object(map) = &mut value {
        map.insert("provenance".into(), provenance.clone());
    }
    value
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub fn write_json(dir: &Path, name: &str, value: &Value) -> Result<PathBuf, Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialise");
    text.push('\n');
    write(dir, name, &text)
}
