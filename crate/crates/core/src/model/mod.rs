//! The unified encoder–decoder: configuration, parameters, checkpoints and
//! forward passes.

mod archive;
mod config;
pub mod net;
pub mod nn;
mod params;

pub use archive::{Archive, ARCHIVE_VERSION};
pub use config::ModelConfig;
pub use nn::Ctx;
pub(crate) use params::Specs;
pub use params::{count_by_group, count_params, group_of, init_params, param_specs, resize_vocab, Init, ParamSpec, ParamStore};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{samples} samples is shorter than one {needed}-sample encoder frame")]
    TooShort { samples: usize, needed: usize },
    #[error("token id {0} is outside the vocabulary")]
    InvalidId(u32),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A configuration with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = crate::seed::child_rng(seed, "init");
        let params = init_params(&config, &mut rng);
        Ok(Self { config, params })
    }

    /// Checkpoint archive with `extra` merged into the metadata.
    pub fn to_archive(&self, extra: serde_json::Value) -> Archive {
        let mut meta = serde_json::json!({
            "kind": "model",
            "config": self.config,
        });
        if let (Some(m), serde_json::Value::Object(e)) = (meta.as_object_mut(), extra) {
            m.extend(e);
        }
        let mut a = Archive::new(meta);
        for (name, t) in self.params.iter() {
            a.push(name, t.clone());
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self, ModelError> {
        let config: ModelConfig = serde_json::from_value(a.meta.get("config").cloned().unwrap_or_default())
            .map_err(|e| ModelError::BadCheckpoint(format!("config: {e}")))?;
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, t) in &a.arrays {
            params.insert(name, t.clone());
        }
        for spec in param_specs(&config) {
            match params.get(&spec.name) {
                Some(t) if t.shape() == spec.shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::BadCheckpoint(format!(
                        "{} has shape {:?}, expected {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                None => return Err(ModelError::BadCheckpoint(format!("missing {}", spec.name))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), ModelError> {
        self.to_archive(extra).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), ModelError> {
        let a = Archive::load(path)?;
        Ok((Self::from_archive(&a)?, a.meta))
    }
}

/// Parameter counts per sub-network and in total, one per line.
pub fn describe(cfg: &ModelConfig) -> String {
    let groups = count_by_group(cfg);
    let total: usize = groups.values().sum();
    let mut out = String::new();
    for (g, n) in &groups {
        out.push_str(&format!("{g:<24} {n:>12}\n"));
    }
    out.push_str(&format!("{:<24} {total:>12}  ({:.1} M)\n", "total", total as f64 / 1e6));
    out
}
