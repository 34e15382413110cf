use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CliError;

/// Fully resolved settings of one run, written to `<out>/config.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub preset: String,
    pub seed: u64,
    pub out: PathBuf,
    pub settings: Map<String, Value>,
}

impl RunConfig {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Flat key/value overrides read from a JSON config file; keys are
/// consumed as they are applied so leftovers can be reported.
pub struct Overrides {
    values: Map<String, Value>,
    used: BTreeSet<String>,
}

impl Overrides {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let values = match path {
            None => Map::new(),
            Some(p) => {
                let src = std::fs::read_to_string(p)?;
                match serde_json::from_str::<Value>(&src)? {
                    Value::Object(m) => m,
                    _ => return Err(CliError::Usage(format!("{}: config must be a flat JSON object", p.display()))),
                }
            }
        };
        Ok(Self {
            values,
            used: BTreeSet::new(),
        })
    }

    /// Flag values win over the file.
    pub fn set(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }

    /// `base` with every matching key replaced.
    pub fn apply<T: Serialize + DeserializeOwned>(&mut self, base: &T) -> Result<T, CliError> {
        let mut obj = match serde_json::to_value(base)? {
            Value::Object(m) => m,
            _ => unreachable!("configs serialize to objects"),
        };
        for (k, v) in &self.values {
            if obj.contains_key(k) {
                obj.insert(k.clone(), v.clone());
                self.used.insert(k.clone());
            }
        }
        serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Usage(format!("bad config value: {e}")))
    }

    pub fn take<T: DeserializeOwned>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => {
                self.used.insert(key.to_string());
                serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("bad value for {key}: {e}")))
            }
        }
    }

    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<&String> = self.values.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown config keys: {unknown:?}")))
        }
    }
}

/// Merge several serializable sections into one flat settings map.
pub fn settings(sections: &[Value]) -> Map<String, Value> {
    let mut out = Map::new();
    for s in sections {
        if let Value::Object(m) = s {
            out.extend(m.clone());
        }
    }
    out
}
