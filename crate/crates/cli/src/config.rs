//! Config loading with `--set` overrides. Precedence: file < overrides < explicit flags.

use std::path::Path;

use dectd_core::harness::RunConfig;
use toml::{Table, Value};

use crate::CliError;

/// Parses `key.path=value`; the value is read as a TOML literal, falling back to a string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override `{spec}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()));
    Ok((path, value))
}

fn apply(table: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for seg in parents {
        let entry = node.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{}` is not a section", path.join("."))))?;
    }
    node.insert(last.clone(), value);
    Ok(())
}

/// Reads the config file (or starts from defaults) and applies overrides in order.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        apply(&mut table, &key, value)?;
    }
    let cfg: RunConfig = Value::Table(table).try_into().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical text of the effective config; hashed into the manifest.
pub fn canonical(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}
