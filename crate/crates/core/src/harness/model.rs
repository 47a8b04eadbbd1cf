use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ActorCriticHeads, AgentKind, FeatureExtractor, NetworkConfig, PolicyOutput};
use crate::curiosity::{CuriosityVariant, DynamicsModels};
use crate::diff::{argmax, categorical_sample, softmax, Checkpoint, Graph, ParamStore, Tensor, Var};
use crate::envs::{EnvConfig, Observation, Policy};
use crate::error::{Error, Result};

/// Architecture description stored in checkpoint metadata; enough to rebuild
/// an identical parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub agent: AgentKind,
    pub obs_dim: usize,
    pub num_actions: usize,
    pub network: NetworkConfig,
    pub curiosity: CuriosityVariant,
}

/// Checkpoint metadata: the model layout plus the environment it was
/// trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    pub env: EnvConfig,
    pub frame_stack: usize,
    pub seed: u64,
    pub rollouts: usize,
}

pub struct AgentModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub extractor: FeatureExtractor,
    pub heads: ActorCriticHeads,
    pub dynamics: Option<DynamicsModels>,
}

impl AgentModel {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.network.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let extractor = FeatureExtractor::new(&mut store, spec.obs_dim, &spec.network, &mut rng)?;
        let n = spec.network.feature_dim;
        let init = spec.network.attention_init;
        let heads = ActorCriticHeads::new(
            &mut store,
            n,
            spec.num_actions,
            spec.agent.attention_heads().then_some(init),
            &mut rng,
        )?;
        let dynamics = match spec.curiosity {
            CuriosityVariant::None => None,
            v => Some(DynamicsModels::new(
                &mut store,
                v,
                n,
                spec.num_actions,
                spec.network.dynamics_hidden,
                init,
                &mut rng,
            )?),
        };
        Ok(AgentModel {
            spec,
            store,
            extractor,
            heads,
            dynamics,
        })
    }

    /// Rebuilds the model described by a checkpoint and loads its values.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, CheckpointMeta)> {
        let meta: CheckpointMeta = serde_json::from_value(ckpt.metadata.clone())
            .map_err(|e| Error::Checkpoint(format!("unreadable metadata: {e}")))?;
        let mut model = AgentModel::new(meta.model.clone(), 0)?;
        ckpt.restore_params(&mut model.store)?;
        Ok((model, meta))
    }

    fn batch(&self, observations: &[Observation]) -> Result<Tensor> {
        let d = self.spec.obs_dim;
        if let Some(o) = observations.iter().find(|o| o.len() != d) {
            return Err(Error::ShapeMismatch {
                op: "observation",
                left: vec![d],
                right: vec![o.len()],
            });
        }
        let flat: Vec<f64> = observations.iter().flatten().copied().collect();
        Tensor::matrix(observations.len(), d, flat)
    }

    /// Runs the extractor and heads on a batch of observations.
    pub fn forward<'g>(&self, g: &mut Graph<'g>, observations: &[Observation]) -> Result<(Var, PolicyOutput)> {
        let x = g.constant(self.batch(observations)?);
        let phi = self.extractor.extract_features(g, x)?;
        let out = self.heads.forward(g, phi)?;
        Ok((phi, out))
    }

    /// Action probabilities and value estimates for each observation.
    pub fn evaluate_batch(&self, observations: &[Observation]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut g = Graph::new(&self.store);
        let (_, out) = self.forward(&mut g, observations)?;
        let a = self.spec.num_actions;
        let probs = g
            .value(out.action_logits)
            .chunks(a)
            .map(softmax)
            .collect::<Result<Vec<_>>>()?;
        Ok((probs, g.value(out.value).to_vec()))
    }

    pub fn values(&self, observations: &[Observation]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let x = g.constant(self.batch(observations)?);
        let phi = self.extractor.extract_features(&mut g, x)?;
        let input = match &self.heads.attn_v {
            Some(attn) => attn.gate(&mut g, phi, phi)?,
            None => phi,
        };
        let v = self.heads.critic.forward(&mut g, input)?;
        Ok(g.value(v).to_vec())
    }

    pub fn checkpoint(&self, optimizer: Option<&crate::diff::OptimizerState>, meta: &CheckpointMeta) -> Result<Checkpoint> {
        Ok(Checkpoint::capture(&self.store, optimizer, serde_json::to_value(meta)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Most probable action.
    Greedy,
    /// Sample from the policy.
    Sample,
}

/// Adapts a model to the [`Policy`] interface used by rollout collection.
pub struct ModelPolicy<'m, R> {
    pub model: &'m AgentModel,
    pub rng: R,
    pub mode: ActionMode,
}

impl<'m, R: Rng> ModelPolicy<'m, R> {
    pub fn new(model: &'m AgentModel, rng: R, mode: ActionMode) -> Self {
        ModelPolicy { model, rng, mode }
    }
}

impl<R: Rng> Policy for ModelPolicy<'_, R> {
    fn act(&mut self, observations: &[Observation]) -> Result<Vec<usize>> {
        let (probs, _) = self.model.evaluate_batch(observations)?;
        probs
            .iter()
            .map(|p| match self.mode {
                ActionMode::Greedy => Ok(argmax(p)),
                ActionMode::Sample => categorical_sample(p, &mut self.rng),
            })
            .collect()
    }

    fn values(&mut self, observations: &[Observation]) -> Result<Vec<f64>> {
        self.model.values(observations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curiosity::CuriosityVariant;

    fn spec(agent: AgentKind) -> ModelSpec {
        ModelSpec {
            agent,
            obs_dim: 12,
            num_actions: 4,
            network: NetworkConfig {
                hidden: vec![8],
                feature_dim: 6,
                dynamics_hidden: 5,
                ..NetworkConfig::default()
            },
            curiosity: CuriosityVariant::for_agent(agent),
        }
    }

    #[test]
    fn parameter_layout_per_kind() {
        let has = |m: &AgentModel, prefix: &str| m.store.iter().any(|(_, p)| p.name.starts_with(prefix));
        let a2c = AgentModel::new(spec(AgentKind::A2c), 0).unwrap();
        assert!(!has(&a2c, "curiosity") && !has(&a2c, "attn_pi"));
        let att = AgentModel::new(spec(AgentKind::Atta2c), 0).unwrap();
        assert!(has(&att, "attn_pi") && has(&att, "attn_v") && has(&att, "curiosity.forward"));
        let rcm = AgentModel::new(spec(AgentKind::Rcm), 0).unwrap();
        assert!(has(&rcm, "curiosity.attn_loss") && !has(&rcm, "curiosity.attn_fwd"));
    }

    #[test]
    fn values_match_forward() {
        for kind in [AgentKind::A2c, AgentKind::Atta2c] {
            let m = AgentModel::new(spec(kind), 3).unwrap();
            let obs = vec![vec![0.5; 12], (0..12).map(|i| i as f64 / 12.0).collect()];
            let (_, v) = m.evaluate_batch(&obs).unwrap();
            assert_eq!(v, m.values(&obs).unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = AgentModel::new(spec(AgentKind::IcmAttn2), 9).unwrap();
        let meta = CheckpointMeta {
            model: m.spec.clone(),
            env: EnvConfig::default(),
            frame_stack: 1,
            seed: 9,
            rollouts: 0,
        };
        let ckpt = m.checkpoint(None, &meta).unwrap();
        let (back, meta2) = AgentModel::from_checkpoint(&ckpt).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(back.store, m.store);
    }

    #[test]
    fn observation_width_checked() {
        let m = AgentModel::new(spec(AgentKind::A2c), 0).unwrap();
        assert!(matches!(m.evaluate_batch(&[vec![0.0; 5]]), Err(Error::ShapeMismatch { .. })));
    }
}
