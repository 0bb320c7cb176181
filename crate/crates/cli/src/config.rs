//! `--config FILE`: line-oriented `key = value` defaults for subcommand flags.
//!
//! Keys are long flag names (with or without the leading `--`). Values from
//! the file are spliced in right after the subcommand, unless the same flag
//! already appears on the command line, which always wins. `true` turns a
//! switch on, `false` leaves it off.

use std::fs;

use anyhow::{bail, Context, Result};

pub fn expand(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let pairs = parse(&text).with_context(|| format!("in config {path}"))?;
    let Some(sub) = subcommand_index(&args) else {
        return Ok(args);
    };
    let given: Vec<&str> = args[sub + 1..]
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    let mut injected = Vec::new();
    for (key, value) in pairs {
        if key == "config" || given.contains(&key.as_str()) {
            continue;
        }
        match value.as_str() {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            _ => injected.push(format!("--{key}={value}")),
        }
    }
    let mut out = args[..=sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

fn config_path(args: &[String]) -> Result<Option<String>> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return match it.next() {
                Some(p) => Ok(Some(p.clone())),
                None => bail!("--config needs a file"),
            };
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Ok(Some(p.to_string()));
        }
    }
    Ok(None)
}

/// Position of the first bare word, skipping `--config` and its value.
fn subcommand_index(args: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if a == "--config" {
            i += 2;
            continue;
        }
        if !a.starts_with('-') {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key = value", n + 1);
        };
        let k = k.trim().trim_start_matches("--");
        if k.is_empty() {
            bail!("line {}: empty key", n + 1);
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
