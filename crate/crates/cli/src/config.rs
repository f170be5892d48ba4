//! Config file loading: TOML with repeatable `--set key.path=value`
//! overrides applied before deserialization, so overridden values are
//! type-checked against the schema and unknown keys are rejected.

use std::path::Path;

use acil_core::pipeline::ExperimentConfig;

use crate::{CliError, CliResult};

pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// The config as it was actually run, overrides included.
    pub effective_toml: String,
}

/// Parses `raw` as a TOML literal (bool, integer, float, ...); bare words
/// fall back to strings so `--set plan.balancing=poor` works unquoted.
fn parse_literal(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    if let Ok(table) = toml::from_str::<toml::Table>(&probe) {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(doc: &mut toml::Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::Config(format!("override '{assignment}' must look like key=value"))
    })?;
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!("override key '{key}' is malformed")));
    }
    let mut cursor = doc;
    for segment in &segments[..segments.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("'{segment}' in '{key}' is not a table")))?;
        cursor = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("'{key}' does not address a table entry")))?;
    table.insert(segments[segments.len() - 1].to_string(), parse_literal(raw));
    Ok(())
}

/// Loads and validates a config file, applying overrides and an optional
/// base-seed replacement. The returned TOML snapshot reflects all overrides.
pub fn load_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: toml::Value = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for assignment in overrides {
        apply_override(&mut doc, assignment)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut doc, &format!("base_seed={seed}"))?;
    }
    let effective_toml = toml::to_string_pretty(&doc)
        .map_err(|e| CliError::Config(format!("cannot re-serialize config: {e}")))?;
    let config: ExperimentConfig = toml::from_str(&effective_toml)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig {
        config,
        effective_toml,
    })
}
