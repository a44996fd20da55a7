//! `--config file.json`: a flat JSON object whose keys name long flags.
//! Flags given on the command line win.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

fn config_path(argv: &[String]) -> Option<String> {
    argv.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            argv.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    })
}

fn present(argv: &[String], flag: &str) -> bool {
    argv.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => bail!("config key `{key}` must be a string, number, boolean or list of scalars"),
    })
}

/// Appends `--key value` for every config entry not already on the command line.
pub fn merge_config(mut argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
    let Value::Object(map) = serde_json::from_str::<Value>(&text).with_context(|| format!("parsing config {path}"))? else {
        bail!("config {path} must hold a JSON object");
    };
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if matches!(key.as_str(), "config") || present(&argv, &flag) {
            continue;
        }
        match &value {
            Value::Bool(true) => argv.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let parts = items.iter().map(|v| scalar(&key, v)).collect::<Result<Vec<_>>>()?;
                argv.push(flag);
                argv.push(parts.join(","));
            }
            v => {
                argv.push(flag);
                argv.push(scalar(&key, v)?);
            }
        }
    }
    Ok(argv)
}
