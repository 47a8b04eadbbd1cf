//! Learned attention distributions.
//!
//! An [`AttentionLayer`] maps a control vector to a probability vector over
//! `target_dim` positions with a single affine map followed by a softmax.
//! In gate mode the distribution rescales a target vector; in loss-weight
//! mode it weights per-dimension squared errors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::params::glorot_uniform;
use crate::diff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Gate,
    LossWeight,
}

impl AttentionMode {
    fn name(self) -> &'static str {
        match self {
            AttentionMode::Gate => "gate",
            AttentionMode::LossWeight => "loss_weight",
        }
    }
}

/// Initial projection. `Zero` starts every layer at the uniform
/// distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionInit {
    #[default]
    Glorot,
    Zero,
}

#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub control_dim: usize,
    pub target_dim: usize,
    /// `[target_dim, control_dim]`.
    pub projection: ParamId,
    pub bias: ParamId,
    pub mode: AttentionMode,
}

impl AttentionLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        control_dim: usize,
        target_dim: usize,
        mode: AttentionMode,
        init: AttentionInit,
        rng: &mut R,
    ) -> Result<Self> {
        let values = match init {
            AttentionInit::Glorot => glorot_uniform(rng, target_dim, control_dim),
            AttentionInit::Zero => vec![0.0; target_dim * control_dim],
        };
        let projection = store.add(
            format!("{name}.projection"),
            Tensor::matrix(target_dim, control_dim, values)?,
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[target_dim])?)?;
        Ok(AttentionLayer {
            control_dim,
            target_dim,
            projection,
            bias,
            mode,
        })
    }

    fn require(&self, mode: AttentionMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::ModeMismatch {
                expected: mode.name(),
                actual: self.mode.name(),
            })
        }
    }

    /// Pre-softmax scores `P·control + b`, row-wise.
    pub fn logits(&self, g: &mut Graph<'_>, control: Var) -> Result<Var> {
        let p = g.param(self.projection);
        let b = g.param(self.bias);
        g.affine(control, p, b)
    }

    /// `softmax(P·control + b)`, one distribution per row of `control`.
    pub fn attn_weights(&self, g: &mut Graph<'_>, control: Var) -> Result<Var> {
        let z = self.logits(g, control)?;
        Ok(g.softmax(z))
    }

    /// `n · w ⊙ target`; uniform weights give back `target` unchanged.
    pub fn gate(&self, g: &mut Graph<'_>, target: Var, control: Var) -> Result<Var> {
        Ok(self.gate_with_weights(g, target, control)?.0)
    }

    /// Like [`gate`](Self::gate) but also returns the weights node.
    pub fn gate_with_weights(&self, g: &mut Graph<'_>, target: Var, control: Var) -> Result<(Var, Var)> {
        self.require(AttentionMode::Gate)?;
        let w = self.attn_weights(g, control)?;
        let scaled = g.scale(w, self.target_dim as f64);
        Ok((g.mul(scaled, target)?, w))
    }

    /// Batch mean of `Σᵢ wᵢ · errors_sqᵢ`, with weights that sum to one.
    pub fn weighted_forward_loss(&self, g: &mut Graph<'_>, errors_sq: Var, control: Var) -> Result<Var> {
        Ok(self.weighted_forward_loss_with_weights(g, errors_sq, control)?.0)
    }

    /// Returns `(loss, per-row weighted sums, weights)`.
    pub fn weighted_forward_loss_with_weights(
        &self,
        g: &mut Graph<'_>,
        errors_sq: Var,
        control: Var,
    ) -> Result<(Var, Var, Var)> {
        self.require(AttentionMode::LossWeight)?;
        if g.value(errors_sq).iter().any(|&e| e < 0.0) {
            return Err(Error::NegativeInput("squared errors"));
        }
        let w = self.attn_weights(g, control)?;
        let weighted = g.mul(w, errors_sq)?;
        let per_row = g.row_sum(weighted);
        Ok((g.mean(per_row), per_row, w))
    }

    /// Batch mean of the weight entropy `−Σ wᵢ ln wᵢ`.
    pub fn weight_entropy(&self, g: &mut Graph<'_>, control: Var) -> Result<Var> {
        let z = self.logits(g, control)?;
        let w = g.softmax(z);
        let logw = g.log_softmax(z);
        let plogp = g.mul(w, logw)?;
        let s = g.row_sum(plogp);
        let m = g.mean(s);
        Ok(g.scale(m, -1.0))
    }
}

/// Entropy of each row of a weight matrix, computed outside the tape.
pub fn row_entropies(weights: &[f64], cols: usize) -> Vec<f64> {
    weights
        .chunks(cols)
        .map(|r| -r.iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln()).sum::<f64>())
        .collect()
}
