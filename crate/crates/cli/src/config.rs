//! Precedence: command-line flags, then the `--config` TOML file, then defaults.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Overlays the flags that were given onto the keys of the config file.
/// Unknown keys in the file are rejected by the target type.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> Result<T> {
    let serde_json::Value::Object(given) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialize to objects")
    };
    let mut base = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            serde_json::to_value(table)?
        }
        None => serde_json::Value::Object(Default::default()),
    };
    let obj = base.as_object_mut().expect("a TOML table is an object");
    obj.extend(given.into_iter().filter(|(_, v)| !v.is_null()));
    serde_json::from_value(base).context("invalid configuration")
}

/// Effective config for artifacts, without keys that do not affect results.
pub fn echo<T: Serialize>(args: &T) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(args)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("threads");
        o.remove("out_dir");
        o.remove("out");
    }
    Ok(v)
}

pub fn is_false(b: &bool) -> bool {
    !*b
}
