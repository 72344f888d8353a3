//! TOML configuration files with dotted `key=value` overrides.
//!
//! Every config struct rejects unknown keys, so a typo in a file or an
//! override surfaces as an error naming the key.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

fn config_err(key: impl Into<String>, reason: impl ToString) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.to_string(),
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `a.b.c=value` to a TOML tree. Intermediate tables must exist.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(key, "empty path segment"));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*part))
            .ok_or_else(|| config_err(key, format!("unknown key `{part}`")))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| config_err(key, "parent is not a table"))?;
    // unknown leaves are inserted here and rejected by deserialization
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Serializes `base`, applies overrides, and deserializes back.
pub fn with_overrides<T: Serialize + DeserializeOwned>(base: &T, overrides: &[String]) -> Result<T> {
    let mut tree = toml::Value::try_from(base).map_err(|e| config_err("<root>", e))?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    from_value(tree)
}

fn from_value<T: DeserializeOwned>(tree: toml::Value) -> Result<T> {
    let text = toml::to_string(&tree).map_err(|e| config_err("<root>", e))?;
    parse(&text)
}

/// Parses TOML text; unknown keys are reported by name.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let key = msg
            .strip_prefix("unknown field `")
            .and_then(|r| r.split('`').next())
            .unwrap_or("<file>")
            .to_string();
        config_err(key, msg)
    })
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| config_err("<root>", e))
}
