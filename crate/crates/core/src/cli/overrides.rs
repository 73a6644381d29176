use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Applies `key=value` overrides to a config. Values are parsed as JSON when
/// possible and kept as strings otherwise; `a.b=v` sets a nested field.
pub fn apply_overrides(config: &TrainConfig, pairs: &[(String, Value)]) -> Result<TrainConfig> {
    let mut doc = serde_json::to_value(config)?;
    for (key, value) in pairs {
        set_path(&mut doc, key, value.clone())?;
    }
    serde_json::from_value(doc).map_err(|e| Error::Config(format!("invalid override: {e}")))
}

pub(crate) fn parse_pair(raw: &str) -> Result<(String, Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(Error::Config("empty override key".into()))
}
