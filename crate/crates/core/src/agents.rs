//! Actor-critic networks.
//!
//! A shared MLP feature extractor produces `φ_t`; linear actor and critic
//! heads read it either directly (A2C) or through two independent
//! self-gating attention layers (AttA2C).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionInit, AttentionLayer, AttentionMode};
use crate::diff::{Activation, Graph, Linear, Mlp, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    A2c,
    Atta2c,
    Icm,
    IcmAttn1,
    IcmAttn2,
    Rcm,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::A2c,
        AgentKind::Atta2c,
        AgentKind::Icm,
        AgentKind::IcmAttn1,
        AgentKind::IcmAttn2,
        AgentKind::Rcm,
    ];

    /// The five configurations compared by default (everything except the
    /// plain A2C ablation).
    pub const COMPARED: [AgentKind; 5] = [
        AgentKind::Atta2c,
        AgentKind::Icm,
        AgentKind::IcmAttn1,
        AgentKind::IcmAttn2,
        AgentKind::Rcm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::A2c => "a2c",
            AgentKind::Atta2c => "atta2c",
            AgentKind::Icm => "icm",
            AgentKind::IcmAttn1 => "icm_attn1",
            AgentKind::IcmAttn2 => "icm_attn2",
            AgentKind::Rcm => "rcm",
        }
    }

    /// Whether the actor and critic read attention-gated features.
    pub fn attention_heads(self) -> bool {
        self == AgentKind::Atta2c
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown agent kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// Hidden width of the forward and inverse dynamics models.
    pub dynamics_hidden: usize,
    pub attention_init: AttentionInit,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![64, 64],
            feature_dim: 32,
            dynamics_hidden: 64,
            attention_init: AttentionInit::Glorot,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.dynamics_hidden == 0 || self.hidden.contains(&0) {
            return Err(Error::config("network widths must be positive"));
        }
        Ok(())
    }
}

/// `φ(s)`: relu hidden layers and a tanh feature layer.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub mlp: Mlp,
}

impl FeatureExtractor {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_dim: usize,
        config: &NetworkConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(config.feature_dim);
        let mlp = Mlp::new(store, "features", &dims, Activation::Relu, Activation::Tanh, rng)?;
        Ok(FeatureExtractor { mlp })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn extract_features(&self, g: &mut Graph<'_>, obs: Var) -> Result<Var> {
        self.mlp.forward(g, obs)
    }
}

/// Tape handles for one forward pass of the heads.
#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput {
    /// `[rows, A]`.
    pub action_logits: Var,
    /// `[rows, 1]`.
    pub value: Var,
    /// Gate weights of the actor and critic attention layers (AttA2C only).
    pub attention: Option<(Var, Var)>,
}

#[derive(Clone, Debug)]
pub struct ActorCriticHeads {
    pub actor: Linear,
    pub critic: Linear,
    pub attn_pi: Option<AttentionLayer>,
    pub attn_v: Option<AttentionLayer>,
}

impl ActorCriticHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_dim: usize,
        num_actions: usize,
        attention: Option<AttentionInit>,
        rng: &mut R,
    ) -> Result<Self> {
        let actor = Linear::new(store, "actor", feature_dim, num_actions, rng)?;
        let critic = Linear::new(store, "critic", feature_dim, 1, rng)?;
        let (attn_pi, attn_v) = match attention {
            Some(init) => (
                Some(AttentionLayer::new(
                    store,
                    "attn_pi",
                    feature_dim,
                    feature_dim,
                    AttentionMode::Gate,
                    init,
                    rng,
                )?),
                Some(AttentionLayer::new(
                    store,
                    "attn_v",
                    feature_dim,
                    feature_dim,
                    AttentionMode::Gate,
                    init,
                    rng,
                )?),
            ),
            None => (None, None),
        };
        Ok(ActorCriticHeads {
            actor,
            critic,
            attn_pi,
            attn_v,
        })
    }

    /// Dispatches to [`forward_atta2c`] when attention layers are present.
    pub fn forward(&self, g: &mut Graph<'_>, phi: Var) -> Result<PolicyOutput> {
        match (&self.attn_pi, &self.attn_v) {
            (Some(pi), Some(v)) => forward_atta2c(g, self, pi, v, phi),
            _ => forward_a2c(g, self, phi),
        }
    }
}

/// Both heads read `φ_t` directly.
pub fn forward_a2c(g: &mut Graph<'_>, heads: &ActorCriticHeads, phi: Var) -> Result<PolicyOutput> {
    Ok(PolicyOutput {
        action_logits: heads.actor.forward(g, phi)?,
        value: heads.critic.forward(g, phi)?,
        attention: None,
    })
}

/// Actor reads `gate_π(φ_t)`, critic reads `gate_A(φ_t)`, each self-gated by
/// its own attention layer.
pub fn forward_atta2c(
    g: &mut Graph<'_>,
    heads: &ActorCriticHeads,
    attn_pi: &AttentionLayer,
    attn_v: &AttentionLayer,
    phi: Var,
) -> Result<PolicyOutput> {
    let (gated_pi, w_pi) = attn_pi.gate_with_weights(g, phi, phi)?;
    let (gated_v, w_v) = attn_v.gate_with_weights(g, phi, phi)?;
    Ok(PolicyOutput {
        action_logits: heads.actor.forward(g, gated_pi)?,
        value: heads.critic.forward(g, gated_v)?,
        attention: Some((w_pi, w_v)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2cCoefficients {
    pub value: f64,
    pub entropy: f64,
}

impl Default for A2cCoefficients {
    fn default() -> Self {
        A2cCoefficients {
            value: 0.5,
            entropy: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct A2cLoss {
    pub policy_loss: Var,
    pub value_loss: Var,
    pub entropy: Var,
    /// `policy_loss + c_v · value_loss − c_e · entropy`.
    pub total: Var,
}

/// Advantage actor-critic loss. `advantages` enter as constants, so the
/// policy term never sends gradient into the critic.
pub fn a2c_loss(
    g: &mut Graph<'_>,
    out: &PolicyOutput,
    actions: &[usize],
    advantages: &[f64],
    returns: &[f64],
    coeffs: A2cCoefficients,
) -> Result<A2cLoss> {
    let rows = actions.len();
    if advantages.len() != rows || returns.len() != rows {
        return Err(Error::Missing(format!(
            "returns/advantages for {rows} transitions (got {} and {})",
            returns.len(),
            advantages.len()
        )));
    }
    if rows == 0 {
        return Err(Error::EmptyInput("a2c_loss"));
    }
    let logp = g.log_softmax(out.action_logits);
    let picked = g.pick(logp, actions)?;
    let col_shape = g.shape(picked).to_vec();
    let adv = g.constant(Tensor::new(col_shape.clone(), advantages.to_vec())?);
    let weighted = g.mul(picked, adv)?;
    let pg = g.mean(weighted);
    let policy_loss = g.scale(pg, -1.0);

    let target = g.constant(Tensor::new(g.shape(out.value).to_vec(), returns.to_vec())?);
    let value_loss = g.mse(out.value, target)?;

    let p = g.softmax(out.action_logits);
    let plogp = g.mul(p, logp)?;
    let neg_h = g.row_sum(plogp);
    let neg_h = g.mean(neg_h);
    let entropy = g.scale(neg_h, -1.0);

    let cv = g.scale(value_loss, coeffs.value);
    let ce = g.scale(entropy, -coeffs.entropy);
    let total = g.add(policy_loss, cv)?;
    let total = g.add(total, ce)?;
    Ok(A2cLoss {
        policy_loss,
        value_loss,
        entropy,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_difference_check, GradCheckOptions};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const A: usize = 4;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            hidden: vec![8],
            feature_dim: 6,
            ..NetworkConfig::default()
        }
    }

    fn build(attention: Option<AttentionInit>) -> (ParamStore, FeatureExtractor, ActorCriticHeads) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let cfg = small_config();
        let fx = FeatureExtractor::new(&mut store, 5, &cfg, &mut rng).unwrap();
        let heads = ActorCriticHeads::new(&mut store, cfg.feature_dim, A, attention, &mut rng).unwrap();
        (store, fx, heads)
    }

    fn obs() -> Tensor {
        Tensor::matrix(3, 5, vec![0.5, -0.2, 0.9, 1.0, 0.0, 0.1, 0.3, -0.7, 0.0, 1.2, -1.0, 0.4, 0.2, 0.6, -0.3]).unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in AgentKind::ALL {
            assert_eq!(k.as_str().parse::<AgentKind>().unwrap(), k);
        }
        assert!("ppo".parse::<AgentKind>().is_err());
        assert_eq!(AgentKind::COMPARED.len(), 5);
    }

    #[test]
    fn features_are_deterministic_with_fixed_width() {
        let (store, fx, _) = build(None);
        let run = || {
            let mut g = Graph::new(&store);
            let x = g.constant(obs());
            let phi = fx.extract_features(&mut g, x).unwrap();
            (g.shape(phi).to_vec(), g.value(phi).to_vec())
        };
        let (shape, a) = run();
        assert_eq!(shape, vec![3, 6]);
        assert_eq!(a, run().1);
    }

    #[test]
    fn a2c_heads_shapes_and_policy() {
        let (store, fx, heads) = build(None);
        let mut g = Graph::new(&store);
        let x = g.constant(obs());
        let phi = fx.extract_features(&mut g, x).unwrap();
        let out = forward_a2c(&mut g, &heads, phi).unwrap();
        assert_eq!(g.shape(out.action_logits), &[3, A]);
        assert_eq!(g.shape(out.value), &[3, 1]);
        let p = g.softmax(out.action_logits);
        for row in g.value(p).chunks(A) {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_attention_heads_equal_a2c() {
        let (store, fx, heads) = build(Some(AttentionInit::Zero));
        let mut g = Graph::new(&store);
        let x = g.constant(obs());
        let phi = fx.extract_features(&mut g, x).unwrap();
        let att = heads.forward(&mut g, phi).unwrap();
        let plain = forward_a2c(&mut g, &heads, phi).unwrap();
        for (a, b) in g.value(att.action_logits).iter().zip(g.value(plain.action_logits)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in g.value(att.value).iter().zip(g.value(plain.value)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn actor_attention_does_not_touch_value() {
        let (mut store, fx, heads) = build(Some(AttentionInit::Glorot));
        let eval = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let x = g.constant(obs());
            let phi = fx.extract_features(&mut g, x).unwrap();
            let out = heads.forward(&mut g, phi).unwrap();
            (g.value(out.action_logits).to_vec(), g.value(out.value).to_vec())
        };
        let (l0, v0) = eval(&store);
        let pid = heads.attn_pi.as_ref().unwrap().projection;
        store.tensor_mut(pid).values_mut().iter_mut().for_each(|w| *w += 0.3);
        let (l1, v1) = eval(&store);
        assert_ne!(l0, l1);
        assert_eq!(v0, v1);
    }

    fn loss_check(attention: Option<AttentionInit>) {
        let (mut store, fx, heads) = build(attention);
        let o = obs();
        let report = finite_difference_check(
            &mut store,
            |g| {
                let x = g.constant(o.clone());
                let phi = fx.extract_features(g, x)?;
                let out = heads.forward(g, phi)?;
                let l = a2c_loss(g, &out, &[0, 3, 1], &[0.7, -1.2, 0.4], &[1.0, 0.0, -0.5], A2cCoefficients::default())?;
                Ok(l.total)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
        assert!(report.checked() > 0);
    }

    #[test]
    fn a2c_gradients_match_finite_differences() {
        loss_check(None);
    }

    #[test]
    fn atta2c_gradients_match_finite_differences() {
        loss_check(Some(AttentionInit::Glorot));
    }

    #[test]
    fn policy_loss_sends_no_gradient_to_critic() {
        let (store, fx, heads) = build(None);
        let mut g = Graph::new(&store);
        let x = g.constant(obs());
        let phi = fx.extract_features(&mut g, x).unwrap();
        let out = heads.forward(&mut g, phi).unwrap();
        let adv: Vec<f64> = g.value(out.value).iter().map(|v| 1.0 - v).collect();
        let l = a2c_loss(&mut g, &out, &[1, 1, 2], &adv, &[0.0; 3], A2cCoefficients::default()).unwrap();
        let grads = g.backward(l.policy_loss).unwrap();
        assert!(grads.param(heads.critic.weight).is_none());
        assert!(grads.param(heads.critic.bias).is_none());
        assert!(grads.param(heads.actor.weight).is_some());
    }

    #[test]
    fn loss_limit_cases() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let heads = ActorCriticHeads::new(&mut store, 3, A, None, &mut rng).unwrap();
        for id in [heads.actor.weight, heads.critic.weight] {
            store.tensor_mut(id).values_mut().fill(0.0);
        }
        store.tensor_mut(heads.critic.bias).values_mut()[0] = 0.25;
        let mut g = Graph::new(&store);
        let phi = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 0.5]).unwrap());
        let out = heads.forward(&mut g, phi).unwrap();
        let l = a2c_loss(&mut g, &out, &[0, 2], &[0.0, 0.0], &[0.25, 0.25], A2cCoefficients::default()).unwrap();
        assert_eq!(g.scalar_value(l.policy_loss).unwrap(), 0.0);
        assert_eq!(g.scalar_value(l.value_loss).unwrap(), 0.0);
        assert_abs_diff_eq!(g.scalar_value(l.entropy).unwrap(), (A as f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g.scalar_value(l.total).unwrap(), -0.01 * (A as f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn mismatched_returns_rejected() {
        let (store, fx, heads) = build(None);
        let mut g = Graph::new(&store);
        let x = g.constant(obs());
        let phi = fx.extract_features(&mut g, x).unwrap();
        let out = heads.forward(&mut g, phi).unwrap();
        assert!(matches!(
            a2c_loss(&mut g, &out, &[0, 1, 2], &[0.0; 3], &[], A2cCoefficients::default()),
            Err(Error::Missing(_))
        ));
    }
}
