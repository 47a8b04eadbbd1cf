//! Curiosity modules: forward and inverse dynamics models over extractor
//! features, with optional attention on their inputs (single or double) or
//! on the forward loss (rational curiosity).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;
use crate::attention::{row_entropies, AttentionInit, AttentionLayer, AttentionMode};
use crate::diff::{Activation, Graph, Mlp, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuriosityVariant {
    None,
    Icm,
    IcmAttn1,
    IcmAttn2,
    Rcm,
}

impl CuriosityVariant {
    /// Default curiosity module paired with each agent kind.
    pub fn for_agent(kind: AgentKind) -> Self {
        match kind {
            AgentKind::A2c => CuriosityVariant::None,
            AgentKind::Atta2c | AgentKind::Icm => CuriosityVariant::Icm,
            AgentKind::IcmAttn1 => CuriosityVariant::IcmAttn1,
            AgentKind::IcmAttn2 => CuriosityVariant::IcmAttn2,
            AgentKind::Rcm => CuriosityVariant::Rcm,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CuriosityVariant::None => "none",
            CuriosityVariant::Icm => "icm",
            CuriosityVariant::IcmAttn1 => "icm_attn1",
            CuriosityVariant::IcmAttn2 => "icm_attn2",
            CuriosityVariant::Rcm => "rcm",
        }
    }
}

impl std::str::FromStr for CuriosityVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use CuriosityVariant::*;
        [None, Icm, IcmAttn1, IcmAttn2, Rcm]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown curiosity variant `{s}`")))
    }
}

/// Whether forward-loss gradients reach the feature extractor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGradient {
    #[default]
    Stop,
    Flow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuriosityConfig {
    /// `None` picks the variant paired with the agent kind.
    pub variant: Option<CuriosityVariant>,
    /// Forward/inverse trade-off in the combined objective.
    pub beta: f64,
    /// Intrinsic reward scale.
    pub eta: f64,
    pub feature_gradient: FeatureGradient,
    /// Rational curiosity: weight the intrinsic reward with the same
    /// attention as the loss.
    pub weighted_reward: bool,
    /// Rational curiosity: coefficient of a bonus on the loss-weight
    /// entropy. Zero disables it.
    pub weight_entropy_coef: f64,
}

impl Default for CuriosityConfig {
    fn default() -> Self {
        CuriosityConfig {
            variant: None,
            beta: 0.2,
            eta: 1.0,
            feature_gradient: FeatureGradient::Stop,
            weighted_reward: true,
            weight_entropy_coef: 0.0,
        }
    }
}

impl CuriosityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.weight_entropy_coef >= 0.0) {
            return Err(Error::config("weight_entropy_coef must be non-negative"));
        }
        Ok(())
    }

    pub fn resolve(&self, kind: AgentKind) -> CuriosityVariant {
        self.variant.unwrap_or_else(|| CuriosityVariant::for_agent(kind))
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsModels {
    pub variant: CuriosityVariant,
    pub feature_dim: usize,
    pub num_actions: usize,
    /// `[φ_t, a] → φ̂_{t+1}`.
    pub forward_model: Mlp,
    /// `[φ_t, φ_{t+1}] → action logits`.
    pub inverse_model: Mlp,
    /// Single: self-gate over `[φ_t, a]`. Double: gate over `φ_t`.
    pub fwd_gate: Option<AttentionLayer>,
    /// Double only: gate over the action one-hot.
    pub act_gate: Option<AttentionLayer>,
    /// Single: self-gate over `[φ_t, φ_{t+1}]`. Double: gate over `φ_t`.
    pub inv_gate: Option<AttentionLayer>,
    /// Double only: gate over `φ_{t+1}`.
    pub inv_next_gate: Option<AttentionLayer>,
    /// Rational curiosity loss weights, controlled by `φ_{t+1}`.
    pub loss_weight: Option<AttentionLayer>,
}

impl DynamicsModels {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        variant: CuriosityVariant,
        feature_dim: usize,
        num_actions: usize,
        hidden: usize,
        init: AttentionInit,
        rng: &mut R,
    ) -> Result<Self> {
        if variant == CuriosityVariant::None {
            return Err(Error::config("no dynamics models for curiosity variant `none`"));
        }
        let (n, a) = (feature_dim, num_actions);
        let forward_model = Mlp::new(
            store,
            "curiosity.forward",
            &[n + a, hidden, n],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        let inverse_model = Mlp::new(
            store,
            "curiosity.inverse",
            &[2 * n, hidden, a],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        let gate = |store: &mut ParamStore, name: &str, dim: usize, rng: &mut R| {
            AttentionLayer::new(store, name, dim, dim, AttentionMode::Gate, init, rng).map(Some)
        };
        let (fwd_gate, act_gate, inv_gate, inv_next_gate) = match variant {
            CuriosityVariant::IcmAttn1 => (
                gate(store, "curiosity.attn_fwd", n + a, rng)?,
                None,
                gate(store, "curiosity.attn_inv", 2 * n, rng)?,
                None,
            ),
            CuriosityVariant::IcmAttn2 => (
                gate(store, "curiosity.attn_fwd", n, rng)?,
                gate(store, "curiosity.attn_act", a, rng)?,
                gate(store, "curiosity.attn_inv", n, rng)?,
                gate(store, "curiosity.attn_inv_next", n, rng)?,
            ),
            _ => (None, None, None, None),
        };
        let loss_weight = if variant == CuriosityVariant::Rcm {
            Some(AttentionLayer::new(
                store,
                "curiosity.attn_loss",
                n,
                n,
                AttentionMode::LossWeight,
                init,
                rng,
            )?)
        } else {
            None
        };
        Ok(DynamicsModels {
            variant,
            feature_dim,
            num_actions,
            forward_model,
            inverse_model,
            fwd_gate,
            act_gate,
            inv_gate,
            inv_next_gate,
            loss_weight,
        })
    }
}

/// One-hot rows for `actions`.
pub fn one_hot(actions: &[usize], num_actions: usize) -> Result<Tensor> {
    let mut v = vec![0.0; actions.len() * num_actions];
    for (r, &a) in actions.iter().enumerate() {
        if a >= num_actions {
            return Err(Error::IndexOutOfRange {
                index: a,
                len: num_actions,
            });
        }
        v[r * num_actions + a] = 1.0;
    }
    Tensor::matrix(actions.len(), num_actions, v)
}

/// Input of the forward model for each variant, plus the gate weights that
/// produced it (single attention: over the whole concatenation; double:
/// over the features).
pub fn forward_input(g: &mut Graph<'_>, models: &DynamicsModels, phi: Var, action: Var) -> Result<(Var, Option<Var>)> {
    match models.variant {
        CuriosityVariant::IcmAttn1 => {
            let cat = g.concat_cols(phi, action)?;
            let gate = models.fwd_gate.as_ref().expect("single-attention forward gate");
            let (out, w) = gate.gate_with_weights(g, cat, cat)?;
            Ok((out, Some(w)))
        }
        CuriosityVariant::IcmAttn2 => {
            let fg = models.fwd_gate.as_ref().expect("double-attention feature gate");
            let ag = models.act_gate.as_ref().expect("double-attention action gate");
            let (gf, w) = fg.gate_with_weights(g, phi, phi)?;
            let ga = ag.gate(g, action, action)?;
            Ok((g.concat_cols(gf, ga)?, Some(w)))
        }
        _ => Ok((g.concat_cols(phi, action)?, None)),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardLoss {
    /// `(1/N) Σ (φ̂ᵢ − φᵢ)²`, averaged over the batch.
    pub j_fwd: Var,
    /// Per-dimension squared errors, `[rows, N]`.
    pub errors_sq: Var,
    pub prediction: Var,
    pub gate_weights: Option<Var>,
}

/// Forward-model loss. `phi` and `phi_next` should come straight from the
/// extractor; detaching follows `feature_gradient`.
pub fn icm_forward_loss(
    g: &mut Graph<'_>,
    models: &DynamicsModels,
    phi: Var,
    action: Var,
    phi_next: Var,
    feature_gradient: FeatureGradient,
) -> Result<ForwardLoss> {
    let (phi, target) = match feature_gradient {
        FeatureGradient::Stop => (g.detach(phi), g.detach(phi_next)),
        FeatureGradient::Flow => (phi, phi_next),
    };
    let (input, gate_weights) = forward_input(g, models, phi, action)?;
    let prediction = models.forward_model.forward(g, input)?;
    let diff = g.sub(prediction, target)?;
    let errors_sq = g.square(diff);
    Ok(ForwardLoss {
        j_fwd: g.mean(errors_sq),
        errors_sq,
        prediction,
        gate_weights,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct RcmLoss {
    pub loss: Var,
    /// `Σᵢ wᵢ · errors_sqᵢ` per row.
    pub per_row: Var,
    pub weights: Var,
}

/// Attention-weighted forward loss with `φ_{t+1}` (detached) as control.
pub fn rcm_forward_loss(g: &mut Graph<'_>, models: &DynamicsModels, errors_sq: Var, phi_next: Var) -> Result<RcmLoss> {
    let layer = models
        .loss_weight
        .as_ref()
        .ok_or_else(|| Error::config("rational curiosity loss needs a loss-weight layer"))?;
    let control = g.detach(phi_next);
    let (loss, per_row, weights) = layer.weighted_forward_loss_with_weights(g, errors_sq, control)?;
    Ok(RcmLoss { loss, per_row, weights })
}

/// Cross-entropy of the inverse model's action prediction.
pub fn icm_inverse_loss(
    g: &mut Graph<'_>,
    models: &DynamicsModels,
    phi: Var,
    phi_next: Var,
    actions: &[usize],
) -> Result<Var> {
    let input = match models.variant {
        CuriosityVariant::IcmAttn1 => {
            let cat = g.concat_cols(phi, phi_next)?;
            models.inv_gate.as_ref().expect("single-attention inverse gate").gate(g, cat, cat)?
        }
        CuriosityVariant::IcmAttn2 => {
            let a = models.inv_gate.as_ref().expect("double-attention inverse gate").gate(g, phi, phi)?;
            let b = models
                .inv_next_gate
                .as_ref()
                .expect("double-attention next-state gate")
                .gate(g, phi_next, phi_next)?;
            g.concat_cols(a, b)?
        }
        _ => g.concat_cols(phi, phi_next)?,
    };
    let logits = models.inverse_model.forward(g, input)?;
    let logp = g.log_softmax(logits);
    let picked = g.pick(logp, actions)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// `(η/2)·mean(errors_sq)` per row, or `(η/2)·Σ wᵢ·errors_sqᵢ` when weights
/// are given.
pub fn intrinsic_reward(errors_sq: &[f64], weights: Option<&[f64]>, cols: usize, eta: f64) -> Result<Vec<f64>> {
    if cols == 0 || errors_sq.len() % cols != 0 {
        return Err(Error::InvalidShape {
            shape: vec![cols],
            len: errors_sq.len(),
        });
    }
    match weights {
        Some(w) => {
            if w.len() != errors_sq.len() {
                return Err(Error::ShapeMismatch {
                    op: "intrinsic_reward",
                    left: vec![errors_sq.len()],
                    right: vec![w.len()],
                });
            }
            Ok(errors_sq
                .chunks(cols)
                .zip(w.chunks(cols))
                .map(|(e, w)| 0.5 * eta * e.iter().zip(w).map(|(e, w)| e * w).sum::<f64>())
                .collect())
        }
        None => Ok(errors_sq
            .chunks(cols)
            .map(|e| 0.5 * eta * e.iter().sum::<f64>() / cols as f64)
            .collect()),
    }
}

/// `J_a2c + β·J_fwd + (1−β)·J_inv`, or just `J_a2c` without curiosity.
pub fn combined_loss(g: &mut Graph<'_>, j_a2c: Var, curiosity: Option<(Var, Var)>, beta: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config(format!("beta must lie in [0, 1], got {beta}")));
    }
    let Some((j_fwd, j_inv)) = curiosity else { return Ok(j_a2c) };
    let f = g.scale(j_fwd, beta);
    let i = g.scale(j_inv, 1.0 - beta);
    let t = g.add(j_a2c, f)?;
    g.add(t, i)
}

#[derive(Clone, Debug)]
pub struct CuriosityOutputs {
    /// Variant-specific forward term (weighted for rational curiosity).
    pub j_fwd: Var,
    pub j_inv: Var,
    pub intrinsic_rewards: Vec<f64>,
    /// Weights that shaped the forward path, `[rows, cols]` flattened.
    pub attn_weights: Option<(Vec<f64>, usize)>,
}

impl CuriosityOutputs {
    pub fn weight_entropy(&self) -> Option<f64> {
        self.attn_weights.as_ref().map(|(w, cols)| {
            let h = row_entropies(w, *cols);
            h.iter().sum::<f64>() / h.len() as f64
        })
    }

    /// Mean share of single-attention weight on the feature part of the
    /// forward input.
    pub fn feature_mass(&self, feature_dim: usize) -> Option<f64> {
        self.attn_weights.as_ref().and_then(|(w, cols)| {
            (*cols > feature_dim).then(|| {
                let rows = w.len() / cols;
                w.chunks(*cols).map(|r| r[..feature_dim].iter().sum::<f64>()).sum::<f64>() / rows as f64
            })
        })
    }
}

/// Full curiosity pass for a batch: losses and per-transition rewards.
pub fn curiosity_forward(
    g: &mut Graph<'_>,
    models: &DynamicsModels,
    config: &CuriosityConfig,
    phi: Var,
    phi_next: Var,
    actions: &[usize],
) -> Result<CuriosityOutputs> {
    let action = g.constant(one_hot(actions, models.num_actions)?);
    let fwd = icm_forward_loss(g, models, phi, action, phi_next, config.feature_gradient)?;
    let j_inv = icm_inverse_loss(g, models, phi, phi_next, actions)?;
    let cols = models.feature_dim;
    let (j_fwd, intrinsic_rewards, attn_weights) = if models.variant == CuriosityVariant::Rcm {
        let rcm = rcm_forward_loss(g, models, fwd.errors_sq, phi_next)?;
        let w = g.value(rcm.weights).to_vec();
        let rewards = if config.weighted_reward {
            intrinsic_reward(g.value(fwd.errors_sq), Some(&w), cols, config.eta)?
        } else {
            intrinsic_reward(g.value(fwd.errors_sq), None, cols, config.eta)?
        };
        let mut j = rcm.loss;
        if config.weight_entropy_coef > 0.0 {
            let layer = models.loss_weight.as_ref().expect("loss-weight layer");
            let control = g.detach(phi_next);
            let h = layer.weight_entropy(g, control)?;
            let bonus = g.scale(h, -config.weight_entropy_coef);
            j = g.add(j, bonus)?;
        }
        (j, rewards, Some((w, cols)))
    } else {
        let rewards = intrinsic_reward(g.value(fwd.errors_sq), None, cols, config.eta)?;
        let weights = fwd.gate_weights.map(|w| {
            let c = *g.shape(w).last().expect("non-empty shape");
            (g.value(w).to_vec(), c)
        });
        (fwd.j_fwd, rewards, weights)
    };
    Ok(CuriosityOutputs {
        j_fwd,
        j_inv,
        intrinsic_rewards,
        attn_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{FeatureExtractor, NetworkConfig};
    use crate::diff::{finite_difference_check, GradCheckOptions};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const N: usize = 5;
    const A: usize = 3;

    fn models(store: &mut ParamStore, variant: CuriosityVariant, init: AttentionInit) -> DynamicsModels {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        DynamicsModels::new(store, variant, N, A, 7, init, &mut rng).unwrap()
    }

    fn phis() -> (Tensor, Tensor) {
        (
            Tensor::matrix(2, N, vec![0.1, -0.5, 0.3, 0.9, -0.2, 0.4, 0.0, -0.8, 0.2, 0.6]).unwrap(),
            Tensor::matrix(2, N, vec![0.2, -0.4, 0.1, 0.7, 0.0, -0.3, 0.5, 0.1, -0.6, 0.2]).unwrap(),
        )
    }

    #[test]
    fn variant_for_each_agent() {
        assert_eq!(CuriosityVariant::for_agent(AgentKind::A2c), CuriosityVariant::None);
        assert_eq!(CuriosityVariant::for_agent(AgentKind::Rcm), CuriosityVariant::Rcm);
        let cfg = CuriosityConfig {
            variant: Some(CuriosityVariant::None),
            ..CuriosityConfig::default()
        };
        assert_eq!(cfg.resolve(AgentKind::Atta2c), CuriosityVariant::None);
    }

    #[test]
    fn config_validation() {
        assert!(CuriosityConfig::default().validate().is_ok());
        for (beta, eta) in [(-0.1, 1.0), (1.5, 1.0), (0.2, 0.0), (0.2, -1.0)] {
            let c = CuriosityConfig {
                beta,
                eta,
                ..CuriosityConfig::default()
            };
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn forward_inputs_reduce_to_plain_concat() {
        let (p, _) = phis();
        let act = one_hot(&[2, 0], A).unwrap();
        let plain: Vec<f64> = p
            .values()
            .chunks(N)
            .zip(act.values().chunks(A))
            .flat_map(|(f, a)| f.iter().chain(a).cloned().collect::<Vec<_>>())
            .collect();
        for variant in [CuriosityVariant::Icm, CuriosityVariant::IcmAttn1, CuriosityVariant::IcmAttn2] {
            let mut store = ParamStore::new();
            let m = models(&mut store, variant, AttentionInit::Zero);
            let mut g = Graph::new(&store);
            let phi = g.constant(p.clone());
            let a = g.constant(act.clone());
            let (x, _) = forward_input(&mut g, &m, phi, a).unwrap();
            assert_eq!(g.shape(x), &[2, N + A]);
            for (u, v) in g.value(x).iter().zip(&plain) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn forward_loss_hand_example() {
        // errors [1, 1, 0, 0] over N = 4 → 0.5
        let g_store = ParamStore::new();
        let mut g = Graph::new(&g_store);
        let pred = g.constant(Tensor::vector(vec![1.0, -1.0, 2.0, 0.0]).unwrap());
        let target = g.constant(Tensor::vector(vec![0.0, 0.0, 2.0, 0.0]).unwrap());
        let d = g.sub(pred, target).unwrap();
        let e = g.square(d);
        let j = g.mean(e);
        assert_eq!(g.scalar_value(j).unwrap(), 0.5);

        let mut store = ParamStore::new();
        let m = models(&mut store, CuriosityVariant::Icm, AttentionInit::Glorot);
        let (p, _) = phis();
        let mut g = Graph::new(&store);
        let phi = g.constant(p);
        let a = g.constant(one_hot(&[1, 2], A).unwrap());
        let (x, _) = forward_input(&mut g, &m, phi, a).unwrap();
        let pred = m.forward_model.forward(&mut g, x).unwrap();
        let exact = g.detach(pred);
        let fl = icm_forward_loss(&mut g, &m, phi, a, exact, FeatureGradient::Stop).unwrap();
        assert_eq!(g.scalar_value(fl.j_fwd).unwrap(), 0.0);
        assert_eq!(g.shape(fl.errors_sq), &[2, N]);
    }

    #[test]
    fn rcm_examples() {
        let mut store = ParamStore::new();
        let m = models(&mut store, CuriosityVariant::Rcm, AttentionInit::Zero);
        {
            let mut g = Graph::new(&store);
            let e = g.constant(Tensor::vector(vec![2.0; N]).unwrap());
            let c = g.constant(Tensor::vector(vec![0.3, -1.0, 2.0, 0.0, 1.0]).unwrap());
            let r = rcm_forward_loss(&mut g, &m, e, c).unwrap();
            assert_abs_diff_eq!(g.scalar_value(r.loss).unwrap(), 2.0, epsilon = 1e-14);
        }
        // w = [0.1, 0.9, 0, 0, 0] (in the limit), errors [10, 0, ...] → 1.0
        let lw = m.loss_weight.as_ref().unwrap();
        store
            .tensor_mut(lw.bias)
            .values_mut()
            .copy_from_slice(&[0.1f64.ln(), 0.9f64.ln(), -800.0, -800.0, -800.0]);
        let mut g = Graph::new(&store);
        let e = g.constant(Tensor::vector(vec![10.0, 0.0, 5.0, 5.0, 5.0]).unwrap());
        let c = g.constant(Tensor::vector(vec![0.0; N]).unwrap());
        let r = rcm_forward_loss(&mut g, &m, e, c).unwrap();
        assert_abs_diff_eq!(g.scalar_value(r.loss).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_loss_limits() {
        let mut store = ParamStore::new();
        let m = models(&mut store, CuriosityVariant::Icm, AttentionInit::Zero);
        let last = m.inverse_model.layers.last().unwrap().clone();
        store.tensor_mut(last.weight).values_mut().fill(0.0);
        {
            let (p, q) = phis();
            let mut g = Graph::new(&store);
            let (phi, next) = (g.constant(p), g.constant(q));
            let j = icm_inverse_loss(&mut g, &m, phi, next, &[0, 2]).unwrap();
            assert_abs_diff_eq!(g.scalar_value(j).unwrap(), (A as f64).ln(), epsilon = 1e-12);
        }
        store.tensor_mut(last.bias).values_mut().copy_from_slice(&[0.0, 50.0, 0.0]);
        let (p, q) = phis();
        let mut g = Graph::new(&store);
        let (phi, next) = (g.constant(p), g.constant(q));
        let j = icm_inverse_loss(&mut g, &m, phi, next, &[1, 1]).unwrap();
        assert!(g.scalar_value(j).unwrap() < 1e-20);
    }

    #[test]
    fn intrinsic_reward_examples() {
        assert_eq!(intrinsic_reward(&[0.0; 4], None, 4, 1.0).unwrap(), vec![0.0]);
        assert_eq!(intrinsic_reward(&[1.0, 0.0, 0.5, 0.5], None, 4, 1.0).unwrap(), vec![0.25]);
        let e = [0.3, 1.2, 0.0, 4.0, 0.7, 0.9];
        let uniform = [1.0 / 3.0; 6];
        let a = intrinsic_reward(&e, None, 3, 2.0).unwrap();
        let b = intrinsic_reward(&e, Some(&uniform), 3, 2.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert!(intrinsic_reward(&e, Some(&uniform[..3]), 3, 1.0).is_err());
    }

    #[test]
    fn combined_loss_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let s = |g: &mut Graph<'_>, v: f64| g.constant(Tensor::scalar(v));
        let (a, f, i) = (s(&mut g, 1.0), s(&mut g, 2.0), s(&mut g, 3.0));
        let t = combined_loss(&mut g, a, Some((f, i)), 0.2).unwrap();
        assert_abs_diff_eq!(g.scalar_value(t).unwrap(), 3.8, epsilon = 1e-15);
        let t = combined_loss(&mut g, a, Some((f, i)), 0.0).unwrap();
        assert_eq!(g.scalar_value(t).unwrap(), 4.0);
        let t = combined_loss(&mut g, a, Some((f, i)), 1.0).unwrap();
        assert_eq!(g.scalar_value(t).unwrap(), 3.0);
        let t = combined_loss(&mut g, a, None, 0.2).unwrap();
        assert_eq!(g.scalar_value(t).unwrap(), 1.0);
        assert!(combined_loss(&mut g, a, Some((f, i)), 1.2).is_err());
    }

    fn extractor_setup(variant: CuriosityVariant) -> (ParamStore, FeatureExtractor, DynamicsModels) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let cfg = NetworkConfig {
            hidden: vec![6],
            feature_dim: N,
            ..NetworkConfig::default()
        };
        let fx = FeatureExtractor::new(&mut store, 4, &cfg, &mut rng).unwrap();
        let m = DynamicsModels::new(&mut store, variant, N, A, 6, AttentionInit::Glorot, &mut rng).unwrap();
        (store, fx, m)
    }

    fn obs_pair() -> (Tensor, Tensor) {
        (
            Tensor::matrix(3, 4, vec![1.0, 0.0, 0.5, -0.3, 0.2, 0.9, -1.0, 0.0, 0.3, 0.3, 0.3, 0.7]).unwrap(),
            Tensor::matrix(3, 4, vec![0.8, 0.1, 0.4, -0.2, 0.0, 1.0, -0.7, 0.1, 0.5, 0.2, 0.1, 0.9]).unwrap(),
        )
    }

    #[test]
    fn gradient_routing() {
        for variant in [
            CuriosityVariant::Icm,
            CuriosityVariant::IcmAttn1,
            CuriosityVariant::IcmAttn2,
            CuriosityVariant::Rcm,
        ] {
            let (store, fx, m) = extractor_setup(variant);
            let (o, o2) = obs_pair();
            let mut g = Graph::new(&store);
            let (x, x2) = (g.constant(o), g.constant(o2));
            let phi = fx.extract_features(&mut g, x).unwrap();
            let next = fx.extract_features(&mut g, x2).unwrap();
            let out = curiosity_forward(&mut g, &m, &CuriosityConfig::default(), phi, next, &[0, 2, 1]).unwrap();
            let reached = |grads: &crate::diff::Gradients, prefix: &str| {
                store
                    .iter()
                    .filter(|(_, p)| p.name.starts_with(prefix))
                    .any(|(id, _)| grads.param(id).is_some_and(|v| v.iter().any(|&x| x != 0.0)))
            };
            let gf = g.backward(out.j_fwd).unwrap();
            assert!(reached(&gf, "curiosity.forward"), "{variant:?}");
            assert!(!reached(&gf, "features"), "{variant:?}");
            assert!(!reached(&gf, "curiosity.inverse"), "{variant:?}");
            assert!(!reached(&gf, "curiosity.attn_inv"), "{variant:?}");
            if variant != CuriosityVariant::Icm {
                let fwd_attn = if variant == CuriosityVariant::Rcm { "curiosity.attn_loss" } else { "curiosity.attn_fwd" };
                assert!(reached(&gf, fwd_attn), "{variant:?}");
            }
            let gi = g.backward(out.j_inv).unwrap();
            assert!(reached(&gi, "curiosity.inverse") && reached(&gi, "features"), "{variant:?}");
            assert!(!reached(&gi, "curiosity.forward"), "{variant:?}");
            assert!(!reached(&gi, "curiosity.attn_fwd") && !reached(&gi, "curiosity.attn_loss"));
        }
    }

    #[test]
    fn flow_policy_lets_forward_loss_train_features() {
        let (store, fx, m) = extractor_setup(CuriosityVariant::Icm);
        let (o, o2) = obs_pair();
        let mut g = Graph::new(&store);
        let (x, x2) = (g.constant(o), g.constant(o2));
        let phi = fx.extract_features(&mut g, x).unwrap();
        let next = fx.extract_features(&mut g, x2).unwrap();
        let a = g.constant(one_hot(&[0, 1, 2], A).unwrap());
        let fl = icm_forward_loss(&mut g, &m, phi, a, next, FeatureGradient::Flow).unwrap();
        let grads = g.backward(fl.j_fwd).unwrap();
        assert!(grads.param(fx.mlp.layers[0].weight).is_some());
    }

    #[test]
    fn curiosity_gradients_match_finite_differences() {
        // Features enter as constants here: the stop-gradient paths are not
        // derivatives with respect to the extractor by design.
        for variant in [
            CuriosityVariant::Icm,
            CuriosityVariant::IcmAttn1,
            CuriosityVariant::IcmAttn2,
            CuriosityVariant::Rcm,
        ] {
            let mut store = ParamStore::new();
            let m = models(&mut store, variant, AttentionInit::Glorot);
            let (p, q) = phis();
            let cfg = CuriosityConfig {
                weight_entropy_coef: 0.05,
                ..CuriosityConfig::default()
            };
            let report = finite_difference_check(
                &mut store,
                |g| {
                    let (phi, next) = (g.constant(p.clone()), g.constant(q.clone()));
                    let out = curiosity_forward(g, &m, &cfg, phi, next, &[2, 0])?;
                    let zero = g.constant(Tensor::scalar(0.0));
                    combined_loss(g, zero, Some((out.j_fwd, out.j_inv)), 0.4)
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passes(1e-4), "{variant:?}: {report:?}");
        }
    }

    #[test]
    fn inverse_loss_gradients_through_extractor() {
        for variant in [CuriosityVariant::Icm, CuriosityVariant::IcmAttn1, CuriosityVariant::IcmAttn2] {
            let (mut store, fx, m) = extractor_setup(variant);
            let (o, o2) = obs_pair();
            let report = finite_difference_check(
                &mut store,
                |g| {
                    let (x, x2) = (g.constant(o.clone()), g.constant(o2.clone()));
                    let phi = fx.extract_features(g, x)?;
                    let next = fx.extract_features(g, x2)?;
                    icm_inverse_loss(g, &m, phi, next, &[2, 0, 1])
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passes(1e-4), "{variant:?}: {report:?}");
        }
    }

    #[test]
    fn flow_forward_loss_gradients_through_extractor() {
        let (mut store, fx, m) = extractor_setup(CuriosityVariant::IcmAttn2);
        let (o, o2) = obs_pair();
        let report = finite_difference_check(
            &mut store,
            |g| {
                let (x, x2) = (g.constant(o.clone()), g.constant(o2.clone()));
                let phi = fx.extract_features(g, x)?;
                let next = fx.extract_features(g, x2)?;
                let a = g.constant(one_hot(&[1, 0, 2], A)?);
                Ok(icm_forward_loss(g, &m, phi, a, next, FeatureGradient::Flow)?.j_fwd)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn uniform_attention_variants_match_icm() {
        let (o, o2) = obs_pair();
        let run = |variant: CuriosityVariant| {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut store = ParamStore::new();
            let cfg = NetworkConfig {
                hidden: vec![6],
                feature_dim: N,
                ..NetworkConfig::default()
            };
            let fx = FeatureExtractor::new(&mut store, 4, &cfg, &mut rng).unwrap();
            let m = DynamicsModels::new(&mut store, variant, N, A, 6, AttentionInit::Zero, &mut rng).unwrap();
            let mut g = Graph::new(&store);
            let (x, x2) = (g.constant(o.clone()), g.constant(o2.clone()));
            let phi = fx.extract_features(&mut g, x).unwrap();
            let next = fx.extract_features(&mut g, x2).unwrap();
            let out = curiosity_forward(&mut g, &m, &CuriosityConfig::default(), phi, next, &[1, 0, 2]).unwrap();
            let j_a2c = g.constant(Tensor::scalar(0.7));
            let total = combined_loss(&mut g, j_a2c, Some((out.j_fwd, out.j_inv)), 0.2).unwrap();
            (g.scalar_value(total).unwrap(), out.intrinsic_rewards)
        };
        let (t0, r0) = run(CuriosityVariant::Icm);
        for v in [CuriosityVariant::IcmAttn1, CuriosityVariant::IcmAttn2, CuriosityVariant::Rcm] {
            let (t, r) = run(v);
            assert_abs_diff_eq!(t, t0, epsilon = 1e-10);
            for (a, b) in r.iter().zip(&r0) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn feature_mass_reported_for_single_attention() {
        let (store, fx, m) = extractor_setup(CuriosityVariant::IcmAttn1);
        let (o, o2) = obs_pair();
        let mut g = Graph::new(&store);
        let (x, x2) = (g.constant(o), g.constant(o2));
        let phi = fx.extract_features(&mut g, x).unwrap();
        let next = fx.extract_features(&mut g, x2).unwrap();
        let out = curiosity_forward(&mut g, &m, &CuriosityConfig::default(), phi, next, &[0, 0, 0]).unwrap();
        let mass = out.feature_mass(N).unwrap();
        assert!(mass > 0.0 && mass < 1.0);
        assert!(out.weight_entropy().unwrap() > 0.0);
        assert!(out.intrinsic_rewards.iter().all(|&r| r >= 0.0));
    }
}
