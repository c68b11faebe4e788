//! Config files that mirror command-line flags.
//!
//! A config file is a list of `key = value` lines, one per flag (`reps = 500` is
//! `--reps=500`; `paper = true` is `--paper`). Lines starting with `#` are comments,
//! except `#@ key = value`, which is how every report embeds its resolved config:
//! when a file has any `#@` lines only those are read, so a CSV or Markdown report
//! can be fed back as a config. JSON reports are read through their `"config"` object.
//! The entries are placed before the user's flags, and later flags win.

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

/// Flags that take no value.
const PRESENCE_FLAGS: [&str; 3] = ["paper", "dump-raw", "no-banner"];

/// Parses config text into `(key, value)` pairs in file order.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    if text.trim_start().starts_with('{') {
        return parse_json(text);
    }
    let embedded = text.lines().any(|l| l.trim_start().starts_with("#@"));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        let body = if let Some(rest) = line.strip_prefix("#@") {
            rest
        } else if embedded || line.is_empty() || line.starts_with('#') {
            continue;
        } else {
            line
        };
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_json(text: &str) -> Result<Vec<(String, String)>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))?;
    let mut out = Vec::new();
    if let Some(c) = root.get("command").and_then(Value::as_str) {
        out.push(("command".to_string(), c.to_string()));
    }
    let obj = root
        .get("config")
        .unwrap_or(&root)
        .as_object()
        .ok_or_else(|| Error::Config("JSON config must be an object".into()))?;
    for (k, v) in obj {
        let s = match v {
            Value::String(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
            Value::Number(n) => n.to_string(),
            other => return Err(Error::Config(format!("config key `{k}` has unsupported value {other}"))),
        };
        if k != "command" {
            out.push((k.clone(), s));
        }
    }
    Ok(out)
}

/// Reads and parses a config file.
pub fn load(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text)
}

/// Turns entries into flags for `command`. A `command` entry must match.
pub fn to_args(entries: &[(String, String)], command: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (k, v) in entries {
        if k == "command" {
            if v != command {
                return Err(Error::Config(format!("config is for `{v}`, not `{command}`")));
            }
            continue;
        }
        if PRESENCE_FLAGS.contains(&k.as_str()) {
            match v.as_str() {
                "true" => args.push(format!("--{k}")),
                "false" => {}
                other => return Err(Error::Config(format!("`{k}` must be true or false, got `{other}`"))),
            }
        } else {
            args.push(format!("--{k}={v}"));
        }
    }
    Ok(args)
}

/// Replaces `--config PATH` in `argv` by the flags it holds, inserted right after the
/// subcommand so that explicit flags override them.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(command) = argv.get(1).filter(|c| !c.starts_with('-')).cloned() else {
        return Ok(argv);
    };
    let mut rest = Vec::new();
    let mut path = None;
    let mut it = argv.into_iter().skip(2);
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| Error::Config("--config needs a path".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let mut out = vec!["cbdid".to_string(), command.clone()];
    if let Some(p) = path {
        out.extend(to_args(&load(Path::new(&p))?, &command)?);
    }
    out.extend(rest);
    Ok(out)
}
