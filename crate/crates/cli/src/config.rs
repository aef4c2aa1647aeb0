//! `key=value` option files, spliced into the argument list ahead of the
//! command line so explicit options override them.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::Command;

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Usage(String),
}

fn parse(path: &Path, text: &str, known: &[String]) -> Result<Vec<OsString>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = || format!("{}:{}", path.display(), i + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Usage(format!("{}: expected key=value", at())))?;
        let key = key.trim().replace('_', "-");
        if key == "config" || !known.contains(&key) {
            return Err(ConfigError::Usage(format!("{}: unknown key {key:?}", at())));
        }
        out.push(format!("--{key}={}", value.trim()).into());
    }
    Ok(out)
}

/// Expands `--config FILE` for the invoked subcommand.
pub fn expand(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(verb_at) = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1)
    else {
        return Ok(args);
    };
    let Some(sub) = cmd.find_subcommand(args[verb_at].to_string_lossy().as_ref()) else {
        return Ok(args);
    };
    let mut path = None;
    for (i, a) in args.iter().enumerate().skip(verb_at + 1) {
        let s = a.to_string_lossy();
        if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if s == "--config" {
            path = args.get(i + 1).map(|p| p.to_string_lossy().into_owned());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let known: Vec<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let path = Path::new(&path);
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    let extra = parse(path, &text, &known)?;
    let mut out = args[..=verb_at].to_vec();
    out.extend(extra);
    out.extend(args[verb_at + 1..].iter().cloned());
    Ok(out)
}
