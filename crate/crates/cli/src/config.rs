//! `key = value` configuration files.
//!
//! Keys are long option names without the leading dashes; underscores may
//! stand in for dashes. Entries are spliced
//! into the argument list right after the subcommand name, so flags given on
//! the command line override them.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use nesphere::Error;

pub fn parse(text: &str) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format {
                line: i + 1,
                message: "expected `key = value`".into(),
            });
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(Error::Format {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push((key.replace('_', "-"), value.trim().to_string()));
    }
    Ok(out)
}

/// Converts entries to flags. `true` and `false` toggle switches.
fn to_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut flags = Vec::new();
    for (key, value) in entries {
        match value.as_str() {
            "true" => flags.push(format!("--{key}").into()),
            "false" => {}
            _ => flags.push(format!("--{key}={value}").into()),
        }
    }
    flags
}

/// Finds `--config <path>` (or `--config=<path>`) in `args`.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            return iter.next().cloned();
        }
        if let Some(rest) = text.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

/// Returns `args` with the entries of any `--config` file inserted after the subcommand.
pub fn expand(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>, Error> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let flags = to_flags(&parse(&text)?);
    let position = args
        .iter()
        .position(|a| subcommands.iter().any(|s| a.to_string_lossy() == *s));
    let mut args = args;
    match position {
        Some(p) => {
            let tail = args.split_off(p + 1);
            args.extend(flags);
            args.extend(tail);
        }
        None => args.extend(flags),
    }
    Ok(args)
}
