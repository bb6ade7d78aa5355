use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the resolved configuration as key-sorted compact JSON.
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
}

/// Hash of a configuration that does not depend on key order: objects are
/// printed with their keys sorted, whatever order the map keeps them in.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let mut text = String::new();
    canonical(&serde_json::to_value(config)?, &mut text)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn canonical(value: &Value, out: &mut String) -> Result<()> {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key)?);
                out.push(':');
                canonical(&map[key], out)?;
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical(item, out)?;
            }
            out.push(']');
        }
        scalar => out.push_str(&serde_json::to_string(scalar)?),
    }
    Ok(())
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, config: &T, seed: u64, wall_time_seconds: f64, outputs: &[&Path]) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: config_hash(config)?,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        })
    }
}
