//! JSON run configurations with `--set key=value` overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable consulted when a configuration has no `seed`.
pub const SEED_ENV: &str = "HYPEREM_SEED";

/// Reads the config file (if any) and applies the overrides in order.
pub fn load(path: Option<&Path>, sets: &[String]) -> CliResult<Value> {
    let mut v = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !v.is_object() {
        return Err(CliError::usage("config must be a JSON object"));
    }
    for s in sets {
        apply_set(&mut v, s)?;
    }
    Ok(v)
}

/// `a.b=value`; the value is read as JSON when it parses, else as a string.
pub fn apply_set(v: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {assignment:?}")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::usage(format!("bad key in --set {assignment:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = v;
    for part in &parts[..parts.len() - 1] {
        let obj =
            cur.as_object_mut().ok_or_else(|| CliError::usage(format!("--set {key}: {part} is not an object")))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .ok_or_else(|| CliError::usage(format!("--set {key}: parent is not an object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Fills `seed` from the environment when the config lacks one. With
/// `required`, a missing seed is a usage error.
pub fn resolve_seed(v: &mut Value, required: bool) -> CliResult<()> {
    let obj = v.as_object_mut().ok_or_else(|| CliError::usage("config must be a JSON object"))?;
    if obj.contains_key("seed") {
        return Ok(());
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
            obj.insert("seed".into(), Value::from(seed));
            Ok(())
        }
        Err(_) if required => Err(CliError::usage(format!(
            "a seed is required: set \"seed\" in the config, pass --set seed=N or export {SEED_ENV}"
        ))),
        Err(_) => Ok(()),
    }
}

pub fn parse<T: DeserializeOwned>(v: Value) -> CliResult<T> {
    serde_json::from_value(v).map_err(|e| CliError::usage(format!("config: {e}")))
}

/// SHA-256 of the compact JSON serialization, hex encoded.
pub fn hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
