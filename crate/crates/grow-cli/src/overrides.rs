//! `--set key=value` handling: edits applied to the parsed TOML table
//! before the config is deserialized, so overrides carry proper types and
//! are reflected in the config hash.

use grow_core::error::GrowError;

/// Apply `key=value` overrides to a TOML document. Keys address top-level
//  entries; values are parsed as TOML literals, falling back to strings.
pub fn apply(text: &str, sets: &[String]) -> Result<String, GrowError> {
    if sets.is_empty() {
        return Ok(text.to_string());
    }
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| GrowError::Config(format!("invalid train config: {e}")))?;
    for entry in sets {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| GrowError::Config(format!("--set expects key=value, got '{entry}'")))?;
        let value = parse_value(raw);
        table.insert(key.trim().to_string(), value);
    }
    Ok(toml::to_string(&table).expect("table serializes"))
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {}", raw.trim());
    if let Ok(t) = probe.parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.trim().to_string())
}
