use crate::error::{Error, Result};

/// n-step returns and advantages, flattened env-major like the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Returns {
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Discounted returns for one environment's step sequence, bootstrapping
/// from `bootstrap` after the last step and cutting at every `done`.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `R_t = Σ γ^i r_{t+i} + γ^n V(s_{t+n})` truncated at episode ends, and
/// `Â_t = R_t − V(s_t)`. All per-env slices are indexed `[env][step]`.
pub fn compute_returns(
    rewards: &[Vec<f64>],
    dones: &[Vec<bool>],
    values: &[Vec<f64>],
    bootstrap_values: &[f64],
    gamma: f64,
) -> Result<Returns> {
    if !(gamma >= 0.0 && gamma <= 1.0) {
        return Err(Error::config(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let n = rewards.len();
    if dones.len() != n || values.len() != n || bootstrap_values.len() != n {
        return Err(Error::ShapeMismatch {
            op: "compute_returns",
            left: vec![n],
            right: vec![dones.len(), values.len(), bootstrap_values.len()],
        });
    }
    let mut returns = Vec::new();
    let mut advantages = Vec::new();
    for e in 0..n {
        let t = rewards[e].len();
        if dones[e].len() != t || values[e].len() != t {
            return Err(Error::ShapeMismatch {
                op: "compute_returns",
                left: vec![t],
                right: vec![dones[e].len(), values[e].len()],
            });
        }
        let r = discounted_returns(&rewards[e], &dones[e], bootstrap_values[e], gamma);
        advantages.extend(r.iter().zip(&values[e]).map(|(r, v)| r - v));
        returns.extend(r);
    }
    Ok(Returns { returns, advantages })
}
