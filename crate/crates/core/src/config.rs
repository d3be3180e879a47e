//! Attack configuration files.
//!
//! Configurations are TOML documents written with flat dotted keys
//! (`optimizer.kind = "adam"`, `scheduler.factor = 0.327`, ...) so that trial
//! logs and best-config outputs diff line by line. Lines starting with `#`
//! carry the audit header (toolkit version, seed).

use std::fs;
use std::path::Path;

use crate::attack::AttackConfig;
use crate::error::{Error, Result};

/// Flattens nested tables into `(dotted.key, leaf)` pairs, sorted by key.
pub fn flatten_toml(value: &toml::Value) -> Vec<(String, toml::Value)> {
    fn walk(prefix: &str, v: &toml::Value, out: &mut Vec<(String, toml::Value)>) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, v, out);
                }
            }
            leaf => out.push((prefix.to_string(), leaf.clone())),
        }
    }
    let mut out = Vec::new();
    walk("", value, &mut out);
    out
}

pub fn flat_pairs(cfg: &AttackConfig) -> Vec<(String, toml::Value)> {
    let value = toml::Value::try_from(cfg).expect("attack config serialises to TOML");
    flatten_toml(&value)
}

/// `key=value` pairs joined by spaces, for single-line audit headers.
pub fn flat_inline(cfg: &AttackConfig) -> String {
    flat_pairs(cfg)
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Flat JSON object, used by the trial log.
pub fn flat_json(cfg: &AttackConfig) -> serde_json::Map<String, serde_json::Value> {
    fn walk(prefix: &str, v: serde_json::Value, out: &mut serde_json::Map<String, serde_json::Value>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            leaf => {
                out.insert(prefix.to_string(), leaf);
            }
        }
    }
    let mut out = serde_json::Map::new();
    walk("", serde_json::to_value(cfg).expect("attack config serialises to JSON"), &mut out);
    out
}

/// Renders a config document; `header` lines are emitted as `#` comments.
pub fn to_toml_string(cfg: &AttackConfig, header: &[String]) -> String {
    let mut out = String::new();
    for line in header {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for (k, v) in flat_pairs(cfg) {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

pub fn parse_attack_config(text: &str) -> Result<AttackConfig> {
    let cfg: AttackConfig = toml::from_str(text).map_err(|e| Error::Parse {
        file: "<config>".into(),
        location: e
            .span()
            .map(|s| format!("byte {}", s.start))
            .unwrap_or_else(|| "unknown".into()),
        message: e.message().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_attack_config(path: impl AsRef<Path>) -> Result<AttackConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_attack_config(&text).map_err(|e| match e {
        Error::Parse {
            location, message, ..
        } => Error::Parse {
            file: path.display().to_string(),
            location,
            message,
        },
        other => other,
    })
}

pub fn save_attack_config(cfg: &AttackConfig, header: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_toml_string(cfg, header)).map_err(|e| Error::io(path, e))
}
