//! Resolving a JSON document plus `key=value` overrides into a validated
//! [`ExperimentConfig`].
//!
//! User values are merged onto the defaults of the chosen method, so an
//! empty document yields the default config and privacy toggles follow the
//! method unless set explicitly.

use std::path::Path;

use serde_json::{Map, Value};

use crate::config::{ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::privacy::calibrate_sigma;

/// Reads and resolves a config file, applying `overrides` on top.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, overrides)
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let doc = if text.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(text)?
    };
    resolve(doc, overrides)
}

/// Resolves an already parsed document. A run manifest is accepted too, in
/// which case its embedded config is used.
pub fn resolve(mut doc: Value, overrides: &[String]) -> Result<ExperimentConfig> {
    if !doc.is_object() {
        return Err(Error::config("", "config must be a JSON object"));
    }
    if doc.get("checksums").is_some() {
        if let Some(inner) = doc.get_mut("config").map(Value::take) {
            doc = inner;
        }
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let method = match doc.get("method") {
        Some(m) => deserialize::<Method>(m.clone(), "method")?,
        None => Method::KdUfsl,
    };
    let sigma_given = doc.pointer("/privacy/sigma2").is_some();
    let mut merged = serde_json::to_value(ExperimentConfig::for_method(method))?;
    merge(&mut merged, doc, "")?;
    let mut cfg: ExperimentConfig = deserialize(merged, "")?;
    if let (Some(eps), false) = (cfg.privacy.epsilon, sigma_given) {
        let sigma = calibrate_sigma(eps, cfg.privacy.delta, cfg.privacy.sensitivity)
            .map_err(|e| Error::config("privacy.epsilon", e.to_string()))?;
        cfg.privacy.sigma2 = sigma * sigma;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Sets a dotted key such as `privacy.k=5`. The value is read as JSON when
/// it parses and as a plain string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "malformed key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(parts[..i].join("."), "not an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("key has at least one part")
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Overlays `user` on `base`, rejecting keys `base` does not have. Tagged
/// objects (those with a `kind`) are replaced wholesale when the kind changes.
fn merge(base: &mut Value, user: Value, path: &str) -> Result<()> {
    let Value::Object(user) = user else {
        *base = user;
        return Ok(());
    };
    let Some(base_obj) = base.as_object_mut() else {
        return Err(Error::config(path, "expected a scalar, got an object"));
    };
    if let Some(kind) = user.get("kind") {
        if base_obj.get("kind") != Some(kind) {
            *base = Value::Object(user);
            return Ok(());
        }
    }
    for (key, value) in user {
        let here = join(path, &key);
        match base_obj.get_mut(&key) {
            Some(slot) if slot.is_object() => merge(slot, value, &here)?,
            Some(slot) => *slot = value,
            None => return Err(Error::config(here, "unknown key")),
        }
    }
    Ok(())
}

fn deserialize<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let key = match (prefix.is_empty(), inner == ".") {
            (true, _) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        Error::config(key, e.into_inner().to_string())
    })
}
