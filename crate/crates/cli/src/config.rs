use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// Missing or invalid input data, or a failed check; exit code 1.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
        };
        serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

pub fn data<E: fmt::Display>(context: impl fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Usage(format!("config {}: expected a JSON object", path.display())));
    };
    if let Some((k, _)) = map.iter().find(|(_, v)| v.is_object() || v.is_array()) {
        return Err(CliError::Usage(format!("config {}: key {k:?} is nested; the file must be flat", path.display())));
    }
    Ok(map)
}

/// Merges the config file with the flags that were given (non-null entries
/// of `flags` win) and deserializes the result. Unknown keys are errors.
pub fn resolve<T: DeserializeOwned>(file: Option<&Path>, flags: Map<String, Value>) -> Result<T, CliError> {
    let mut map = match file {
        Some(p) => read_config_file(p)?,
        None => Map::new(),
    };
    map.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Usage(format!("configuration: {e}")))
}

pub fn flags_of(args: &impl Serialize) -> Map<String, Value> {
    match serde_json::to_value(args).expect("flags serialize") {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Tri-state from a `--x` / `--no-x` flag pair.
pub fn switch(on: bool, off: bool) -> Value {
    match (on, off) {
        (true, _) => Value::Bool(true),
        (_, true) => Value::Bool(false),
        _ => Value::Null,
    }
}

pub fn require<T>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing required setting `{key}` (flag --{})", key.replace('_', "-"))))
}

/// Writes the resolved configuration as pretty JSON.
pub fn write_echo(path: &Path, cfg: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    write_file(path, text.as_bytes())
}

/// Echo path for a command whose output is a single file.
pub fn echo_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    out.with_file_name(name)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(data(dir.display()))?;
    }
    std::fs::write(path, bytes).map_err(data(path.display()))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(data(path.display()))
}
