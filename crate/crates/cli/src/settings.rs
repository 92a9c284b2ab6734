//! Config-file loading, flag overlay, settings hashing and artifact output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "CYRISK_OUT_DIR";

/// A parsed config document: one flat table per subcommand plus `[common]`.
#[derive(Debug, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let doc: toml::Table = toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        let root =
            match serde_json::to_value(doc).map_err(|e| CliError::validation(e.to_string()))? {
                Value::Object(m) => m,
                _ => unreachable!("a toml table serialises to an object"),
            };
        for (k, v) in &root {
            if !v.is_object() {
                return Err(CliError::validation(format!(
                    "config key '{k}' must be a section"
                )));
            }
        }
        Ok(Self { root })
    }

    fn section(&self, name: &str) -> Map<String, Value> {
        match self.root.get(name) {
            Some(Value::Object(m)) => m.clone(),
            _ => Map::new(),
        }
    }

    /// Overlay the flags given on the command line onto the config section
    /// for `command`. Unknown keys and mistyped values are validation errors.
    pub fn merge<T: Serialize + DeserializeOwned + Default>(
        &self,
        command: &str,
        flags: &T,
    ) -> Result<T, CliError> {
        let known = match serde_json::to_value(T::default()) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("argument structs serialise to objects"),
        };
        let mut merged = self.section(command);
        if let Some(k) = merged.keys().find(|k| !known.contains_key(*k)) {
            return Err(CliError::validation(format!(
                "unknown key '{k}' in config section [{command}]"
            )));
        }
        if let Value::Object(given) =
            serde_json::to_value(flags).map_err(|e| CliError::validation(e.to_string()))?
        {
            for (k, v) in given {
                if !v.is_null() {
                    merged.insert(k, v);
                }
            }
        }
        serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::validation(format!("config section [{command}]: {e}")))
    }

    pub fn common(&self) -> Result<Common, CliError> {
        self.merge("common", &Common::default())
    }
}

#[derive(Debug, Default, Clone, Serialize, serde::Deserialize)]
pub struct Common {
    pub out_dir: Option<PathBuf>,
}

/// Output directory: flag, then config, then the environment, then `.`.
pub fn resolve_out_dir(flag: Option<PathBuf>, config: &ConfigFile) -> Result<PathBuf, CliError> {
    Ok(flag
        .or(config.common()?.out_dir)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Short hash of the resolved settings of one run. Input paths are replaced
/// by a digest of the file contents so the hash does not depend on where the
/// data lives.
pub fn settings_hash<T: Serialize>(
    command: &str,
    settings: &T,
    inputs: &[&Path],
) -> Result<String, CliError> {
    let digests = inputs
        .iter()
        .map(|p| {
            fs::read(p)
                .map(|b| sha256_hex(&b))
                .map_err(|e| CliError::validation(format!("cannot read {}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut value =
        serde_json::to_value(settings).map_err(|e| CliError::validation(e.to_string()))?;
    if let Value::Object(m) = &mut value {
        m.remove("input");
    }
    let doc = serde_json::json!({
        "command": command,
        "settings": value,
        "inputs": digests,
    });
    Ok(sha256_hex(doc.to_string().as_bytes())[..16].to_string())
}

/// Artifacts are rendered in memory and written only after the whole
/// computation has succeeded, so a failing run leaves no partial files.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(dir: PathBuf, hash: String) -> Self {
        Self {
            dir,
            hash,
            files: Vec::new(),
        }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Add a CSV artifact; `body` starts with its header row.
    pub fn csv(&mut self, name: impl Into<String>, body: Vec<u8>) {
        let mut bytes = format!("# settings_hash={}\n", self.hash).into_bytes();
        bytes.extend(body);
        self.files.push((name.into(), bytes));
    }

    pub fn raw(&mut self, name: impl Into<String>, body: Vec<u8>) {
        self.files.push((name.into(), body));
    }

    pub fn write(self) -> Result<Vec<String>, CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| {
            CliError::validation(format!("cannot create {}: {e}", self.dir.display()))
        })?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let path = self.dir.join(&name);
            fs::write(&path, bytes).map_err(|e| {
                CliError::validation(format!("cannot write {}: {e}", path.display()))
            })?;
            written.push(path.display().to_string());
        }
        Ok(written)
    }
}
