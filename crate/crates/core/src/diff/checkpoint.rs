//! JSON model checkpoints tagged `curio-ckpt-v1`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, OptimizerState};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "curio-ckpt-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: BTreeMap<String, Vec<f64>>,
    pub second_moment: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub step_count: u64,
    /// Free-form description of the model (agent kind, network config).
    pub metadata: serde_json::Value,
    pub params: Vec<ParamRecord>,
    pub optimizer: Option<OptimizerRecord>,
}

impl Checkpoint {
    pub fn capture(store: &ParamStore, optimizer: Option<&OptimizerState>, metadata: serde_json::Value) -> Self {
        let params = store
            .iter()
            .map(|(_, p)| ParamRecord {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                values: p.tensor.values().to_vec(),
                trainable: p.trainable,
            })
            .collect();
        let optimizer = optimizer.map(|o| {
            let names: Vec<String> = store.iter().map(|(_, p)| p.name.clone()).collect();
            let named = |m: &Vec<Vec<f64>>| names.iter().cloned().zip(m.iter().cloned()).collect();
            OptimizerRecord {
                config: o.config,
                step_count: o.step_count,
                first_moment: named(&o.first_moment),
                second_moment: named(&o.second_moment),
            }
        });
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            step_count: optimizer.as_ref().map_or(0, |o| o.step_count),
            metadata,
            params,
            optimizer,
        }
    }

    /// Copies the stored values into an existing store with the same layout.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for rec in &self.params {
            let id = store
                .find(&rec.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", rec.name)))?;
            let p = store.get_mut(id);
            if p.tensor.shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, checkpoint has {:?}",
                    rec.name,
                    p.tensor.shape(),
                    rec.shape
                )));
            }
            p.tensor = Tensor::new(rec.shape.clone(), rec.values.clone())?;
            p.trainable = rec.trainable;
        }
        Ok(())
    }

    pub fn restore_optimizer(&self, store: &ParamStore) -> Result<Option<OptimizerState>> {
        let Some(rec) = &self.optimizer else { return Ok(None) };
        let mut state = OptimizerState::new(rec.config, store)?;
        for (i, (_, p)) in store.iter().enumerate() {
            let m = rec.first_moment.get(&p.name);
            let v = rec.second_moment.get(&p.name);
            match (m, v) {
                (Some(m), Some(v)) if m.len() == p.tensor.len() && v.len() == p.tensor.len() => {
                    state.first_moment[i] = m.clone();
                    state.second_moment[i] = v.clone();
                }
                _ => return Err(Error::Checkpoint(format!("optimizer state for `{}` missing or misshapen", p.name))),
            }
        }
        state.step_count = rec.step_count;
        Ok(Some(state))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format tag `{}` (expected `{CHECKPOINT_FORMAT}`)",
                ckpt.format
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::optim::adam_step;

    #[test]
    fn save_load_restores_params_and_moments() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::matrix(2, 2, vec![0.1, -0.2, 1.0 / 3.0, 4e-17]).unwrap()).unwrap();
        store.add("b", Tensor::vector(vec![0.5, 0.25]).unwrap()).unwrap();
        let mut opt = OptimizerState::new(AdamConfig::default(), &store).unwrap();
        store.tensor_mut(w).set_grad(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        store.tensor_mut(store.find("b").unwrap()).set_grad(vec![0.0, 1.0]).unwrap();
        adam_step(&mut store, &mut opt).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint::capture(&store, Some(&opt), serde_json::json!({"agent": "rcm"}))
            .save(&path)
            .unwrap();

        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.step_count, 1);
        assert_eq!(loaded.metadata["agent"], "rcm");
        let mut fresh = ParamStore::new();
        fresh.add("w", Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        fresh.add("b", Tensor::zeros(&[2]).unwrap()).unwrap();
        loaded.restore_params(&mut fresh).unwrap();
        assert_eq!(fresh, store);
        assert_eq!(loaded.restore_optimizer(&fresh).unwrap().unwrap(), opt);
    }

    #[test]
    fn wrong_format_tag_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let mut ckpt = Checkpoint::capture(&ParamStore::new(), None, serde_json::Value::Null);
        ckpt.format = "something-else".into();
        ckpt.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn shape_mismatch_on_restore() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[3]).unwrap()).unwrap();
        let ckpt = Checkpoint::capture(&store, None, serde_json::Value::Null);
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[4]).unwrap()).unwrap();
        assert!(ckpt.restore_params(&mut other).is_err());
    }
}
