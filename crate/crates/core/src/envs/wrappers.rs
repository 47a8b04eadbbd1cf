use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Env, Observation, Transition};
use crate::error::Result;

/// With probability `p` the previously executed action is repeated in place
/// of the requested one. The transition still records the requested action;
/// `info.executed_action` holds what actually ran.
pub struct StickyActions<E> {
    inner: E,
    prob: f64,
    prev: Option<usize>,
    rng: ChaCha8Rng,
}

impl<E: Env> StickyActions<E> {
    pub fn new(inner: E, prob: f64, seed: u64) -> Self {
        StickyActions {
            inner,
            prob,
            prev: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Env> Env for StickyActions<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s ^ 0x5bd1_e995);
        }
        self.prev = None;
        self.inner.reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let (executed, repeated) = match self.prev {
            Some(prev) if self.rng.gen::<f64>() < self.prob => (prev, true),
            _ => (action, false),
        };
        let mut t = self.inner.step(executed)?;
        self.prev = Some(executed);
        t.action = action;
        t.info.repeated = repeated;
        t.info.executed_action = executed;
        Ok(t)
    }
}

/// Concatenation of the last `k` observations, earliest first, with zeros
/// standing in for frames before the start of the episode.
pub fn stack(history: &[Observation], k: usize, dim: usize) -> Observation {
    let mut out = vec![0.0; k * dim];
    let take = history.len().min(k);
    let offset = k - take;
    for (slot, obs) in history[history.len() - take..].iter().enumerate() {
        out[(offset + slot) * dim..(offset + slot + 1) * dim].copy_from_slice(obs);
    }
    out
}

pub struct FrameStack<E> {
    inner: E,
    k: usize,
    history: VecDeque<Observation>,
}

impl<E: Env> FrameStack<E> {
    pub fn new(inner: E, k: usize) -> Self {
        assert!(k >= 1, "frame stack needs k >= 1");
        FrameStack {
            inner,
            k,
            history: VecDeque::with_capacity(k),
        }
    }

    fn push(&mut self, obs: Observation) -> Observation {
        if self.history.len() == self.k {
            self.history.pop_front();
        }
        self.history.push_back(obs);
        let frames: Vec<Observation> = self.history.iter().cloned().collect();
        stack(&frames, self.k, self.inner.obs_dim())
    }

    fn current(&self) -> Observation {
        let frames: Vec<Observation> = self.history.iter().cloned().collect();
        stack(&frames, self.k, self.inner.obs_dim())
    }
}

impl<E: Env> Env for FrameStack<E> {
    fn obs_dim(&self) -> usize {
        self.k * self.inner.obs_dim()
    }

    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        self.history.clear();
        let obs = self.inner.reset(seed);
        self.push(obs)
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let mut t = self.inner.step(action)?;
        t.state = self.current();
        t.next_state = self.push(std::mem::take(&mut t.next_state));
        Ok(t)
    }
}

impl Env for Box<dyn Env> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }

    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        (**self).reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        (**self).step(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, GridWorld};

    #[test]
    fn stack_pads_and_orders() {
        let o = |v: f64| vec![v; 2];
        assert_eq!(stack(&[o(1.0)], 4, 2), vec![0., 0., 0., 0., 0., 0., 1., 1.]);
        assert_eq!(stack(&[o(1.0), o(2.0)], 1, 2), o(2.0));
        let h = [o(0.0), o(1.0), o(2.0), o(3.0), o(4.0)];
        assert_eq!(stack(&h[..4], 4, 2), vec![0., 0., 1., 1., 2., 2., 3., 3.]);
        assert_eq!(stack(&h, 4, 2), vec![1., 1., 2., 2., 3., 3., 4., 4.]);
    }

    #[test]
    fn frame_stack_tracks_transitions() {
        let grid = GridWorld::new(EnvConfig::default()).unwrap();
        let d = grid.obs_dim();
        let mut env = FrameStack::new(grid, 4);
        let first = env.reset(Some(0));
        assert_eq!(first.len(), 4 * d);
        assert!(first[..3 * d].iter().all(|&v| v == 0.0));
        let t = env.step(3).unwrap();
        assert_eq!(t.state, first);
        assert_eq!(t.next_state[2 * d..3 * d], first[3 * d..]);
    }

    #[test]
    fn frame_stack_of_one_is_identity() {
        let mut plain = GridWorld::new(EnvConfig::default()).unwrap();
        let mut stacked = FrameStack::new(GridWorld::new(EnvConfig::default()).unwrap(), 1);
        assert_eq!(plain.reset(Some(1)), stacked.reset(Some(1)));
        for a in [1, 3, 3, 0] {
            assert_eq!(plain.step(a).unwrap().next_state, stacked.step(a).unwrap().next_state);
        }
    }

    #[test]
    fn sticky_repeat_frequency() {
        let cfg = EnvConfig {
            max_episode_len: 1000,
            height: 16,
            width: 16,
            ..EnvConfig::default()
        };
        let mut env = StickyActions::new(GridWorld::new(cfg).unwrap(), 0.25, 7);
        env.reset(Some(7));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut repeats, mut eligible) = (0usize, 0usize);
        let mut first = true;
        for _ in 0..100_000 {
            let t = env.step(rng.gen_range(0..4)).unwrap();
            if !first {
                eligible += 1;
                repeats += t.info.repeated as usize;
            }
            first = false;
            if t.done {
                env.reset(None);
                first = true;
            }
        }
        let freq = repeats as f64 / eligible as f64;
        assert!((freq - 0.25).abs() < 0.01, "repeat frequency {freq}");
    }

    #[test]
    fn sticky_zero_never_repeats() {
        let mut env = StickyActions::new(GridWorld::new(EnvConfig::default()).unwrap(), 0.0, 1);
        env.reset(Some(1));
        for a in [1, 3, 1, 3, 1] {
            let t = env.step(a).unwrap();
            assert!(!t.info.repeated);
            assert_eq!(t.info.executed_action, a);
        }
    }
}
