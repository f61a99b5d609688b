//! Config resolution: defaults, then a preset or config file, then
//! `--override key=value` flags, then data paths against the fixture root.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use sharenet_core::training::{preset, preset_names, RunConfig};
use toml::{Table, Value};

use crate::CliError;

/// Environment variable naming the directory relative data paths resolve
/// against. Defaults to `fixtures` under the working directory.
pub const FIXTURES_ENV: &str = "MTL_FIXTURES";

pub fn fixture_root() -> PathBuf {
    let root = env::var_os(FIXTURES_ENV).map_or_else(|| PathBuf::from("fixtures"), PathBuf::from);
    fs::canonicalize(&root).unwrap_or(root)
}

fn to_table(cfg: &RunConfig) -> Table {
    Table::try_from(cfg).expect("run config serializes to a table")
}

fn from_table(table: Table, origin: &str) -> Result<RunConfig, CliError> {
    Value::Table(table)
        .try_into::<RunConfig>()
        .map_err(|e| CliError::Usage(format!("{origin}: {}", e.to_string().trim().replace('\n', " "))))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A config file, a path to one without its `.toml` extension, or a
/// built-in preset name (a path whose file stem names a preset also
/// works, so `presets/dep-lws` resolves without the file).
///
/// A file may start from a preset with a top-level `base = "<preset>"`.
pub fn load(spec: &str) -> Result<(RunConfig, String), CliError> {
    let path = Path::new(spec);
    let file = [path.to_path_buf(), path.with_extension("toml")]
        .into_iter()
        .find(|p| p.is_file());
    let Some(file) = file else {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
        return match preset(stem) {
            Ok(cfg) => Ok((cfg, stem.to_string())),
            Err(_) => Err(CliError::Usage(format!(
                "no config file or preset named {spec:?}; presets: {}",
                preset_names().join(", ")
            ))),
        };
    };
    let text = fs::read_to_string(&file).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("{}: {}", file.display(), e.message())))?;
    let mut resolved = match table.remove("base") {
        Some(Value::String(name)) => to_table(&preset(&name).map_err(|e| CliError::Usage(e.to_string()))?),
        Some(other) => return Err(CliError::Usage(format!("{}: base must be a preset name, got {other}", file.display()))),
        None => to_table(&RunConfig::default()),
    };
    merge(&mut resolved, table);
    let name = file.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
    Ok((from_table(resolved, &file.display().to_string())?, name))
}

/// Parses a flag value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` overrides. Keys are checked against the
/// schema and values against the field types.
pub fn apply_overrides(cfg: RunConfig, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table = to_table(&cfg);
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override {ov:?} is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) || path.len() != 2 {
            return Err(CliError::Usage(format!("override key {key:?} must look like section.field")));
        }
        let section = match table.entry(path[0]).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(CliError::Usage(format!("unknown config section {:?}", path[0]))),
        };
        let mut value = parse_value(raw.trim());
        // integers are accepted where floats are expected
        if let (Some(Value::Float(_)), Value::Integer(i)) = (section.get(path[1]), &value) {
            value = Value::Float(*i as f64);
        }
        section.insert(path[1].to_string(), value);
        from_table(table.clone(), &format!("override {key}"))?;
    }
    from_table(table, "overrides")
}

/// Joins relative data paths onto `root`.
pub fn resolve_paths(mut cfg: RunConfig, root: &Path) -> RunConfig {
    for (_, p) in cfg.data.paths_mut() {
        if let Some(path) = p {
            if path.is_relative() {
                *path = root.join(&*path);
            }
        }
    }
    cfg
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("run config serializes")
}

pub fn read_resolved(dir: &Path) -> Result<RunConfig, CliError> {
    let path = dir.join("resolved_config.toml");
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
}
