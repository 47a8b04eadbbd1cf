use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0) || !in_unit(self.beta1) || !in_unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config(format!("invalid adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam moment accumulators, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Ok(OptimizerState {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        })
    }
}

/// One bias-corrected Adam update over every trainable parameter, after which
/// all gradients are cleared.
pub fn adam_step(store: &mut ParamStore, state: &mut OptimizerState) -> Result<()> {
    if state.first_moment.len() != store.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            left: vec![store.len()],
            right: vec![state.first_moment.len()],
        });
    }
    for (_, p) in store.iter() {
        if p.trainable && p.tensor.grad().is_none() {
            return Err(Error::MissingGrad(p.name.clone()));
        }
    }

    state.step_count += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step_count as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);

    for ((p, m), v) in store
        .iter_mut()
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        if !p.trainable {
            continue;
        }
        let grad = p.tensor.take_grad().expect("checked above");
        for (((w, g), m), v) in p.tensor.values_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(value)).unwrap();
        store.tensor_mut(id).set_grad(vec![grad]).unwrap();
        store
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut store = single(1.5, 0.0);
        let mut state = OptimizerState::new(AdamConfig::default(), &store).unwrap();
        adam_step(&mut store, &mut state).unwrap();
        assert_eq!(store.tensor(crate::diff::ParamId(0)).values(), &[1.5]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = single(2.0, 1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = OptimizerState::new(cfg, &store).unwrap();
        adam_step(&mut store, &mut state).unwrap();
        let w = store.tensor(crate::diff::ParamId(0)).values()[0];
        assert!((2.0 - w - 0.1).abs() < 1e-8, "moved by {}", 2.0 - w);
        assert!(store.tensor(crate::diff::ParamId(0)).grad().is_none());
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(0.7)).unwrap();
        let b = store.add("b", Tensor::scalar(0.7)).unwrap();
        let mut state = OptimizerState::new(AdamConfig::default(), &store).unwrap();
        for k in 0..5 {
            let g = 0.3 * k as f64 - 0.5;
            store.tensor_mut(a).set_grad(vec![g]).unwrap();
            store.tensor_mut(b).set_grad(vec![g]).unwrap();
            adam_step(&mut store, &mut state).unwrap();
        }
        assert_eq!(store.tensor(a).values(), store.tensor(b).values());
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(1.0)).unwrap();
        let mut state = OptimizerState::new(AdamConfig::default(), &store).unwrap();
        assert!(matches!(adam_step(&mut store, &mut state), Err(Error::MissingGrad(_))));
        assert_eq!(state.step_count, 0);
    }
}
