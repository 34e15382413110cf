use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sawt_tensor::Tensor;

use crate::model::{Archive, ModelError, ParamStore};

/// Linear warm-up to `peak`, then inverse-square-root decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: u64,
}

impl LrSchedule {
    /// Rate for update number `step` (1-based).
    pub fn at(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.peak * (s / w).min((w / s).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// Adam moments keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    steps: BTreeMap<String, u64>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Global L2 norm of `grads`.
    pub fn grad_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
        grads.values().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Apply one update with learning rate `lr`. Returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64, cfg: &AdamConfig) -> f64 {
        let norm = Self::grad_norm(grads);
        let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            cfg.clip_norm / norm
        } else {
            1.0
        };
        for (name, g) in grads {
            let Some(p) = store.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let t = self.steps.entry(name.clone()).or_insert(0);
            *t += 1;
            let bc1 = 1.0 - cfg.beta1.powf(*t as f64);
            let bc2 = 1.0 - cfg.beta2.powf(*t as f64);
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let gi = gi * scale;
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
            }
        }
        norm
    }

    /// Moments as `m/<name>` and `v/<name>` arrays, per-parameter step counts in the metadata.
    pub fn to_archive(&self, mut meta: serde_json::Value) -> Archive {
        meta["kind"] = "optimizer".into();
        meta["steps"] = serde_json::to_value(&self.steps).expect("string keys");
        let mut a = Archive::new(meta);
        for (name, t) in &self.m {
            a.push(&format!("m/{name}"), t.clone());
        }
        for (name, t) in &self.v {
            a.push(&format!("v/{name}"), t.clone());
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self, ModelError> {
        if a.meta["kind"] != "optimizer" {
            return Err(ModelError::BadCheckpoint("not an optimizer archive".into()));
        }
        let steps: BTreeMap<String, u64> =
            serde_json::from_value(a.meta["steps"].clone()).map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        let mut out = Self {
            steps,
            ..Self::default()
        };
        for (name, t) in &a.arrays {
            if let Some(n) = name.strip_prefix("m/") {
                out.m.insert(n.to_string(), t.clone());
            } else if let Some(n) = name.strip_prefix("v/") {
                out.v.insert(n.to_string(), t.clone());
            } else {
                return Err(ModelError::BadCheckpoint(format!("unexpected array {name}")));
            }
        }
        if out.m.len() != out.steps.len() || out.v.len() != out.steps.len() {
            return Err(ModelError::BadCheckpoint("optimizer moments and step counts disagree".into()));
        }
        Ok(out)
    }
}
