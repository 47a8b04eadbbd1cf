use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Env, Observation, StepInfo, Transition};
use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 4;
/// Observation channels: agent, goal, wall, trap.
pub const CHANNELS: usize = 4;

const CH_AGENT: usize = 0;
const CH_GOAL: usize = 1;
const CH_WALL: usize = 2;
const CH_TRAP: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    GridSparse,
    GridDense,
    NoisyTv,
}

/// Interior wall pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Open,
    /// Two crossing walls splitting the grid into four rooms joined by
    /// single-cell doorways.
    FourRooms,
    /// Horizontal walls every third row with the gap alternating between the
    /// right and left edge, forcing a serpentine path.
    Zigzag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl TrapRegion {
    pub fn contains(&self, (r, c): (usize, usize)) -> bool {
        r >= self.top && r < self.top + self.height && c >= self.left && c < self.left + self.width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Label used to group runs when normalizing scores; derived when absent.
    pub name: Option<String>,
    pub kind: EnvKind,
    pub height: usize,
    pub width: usize,
    pub layout: Layout,
    pub extra_walls: Vec<[usize; 2]>,
    pub start: [usize; 2],
    /// Defaults to the bottom-right cell.
    pub goal: Option<[usize; 2]>,
    pub goal_reward: f64,
    pub step_penalty: f64,
    /// Dense kind only: reward per unit decrease in maze distance to the goal.
    pub shaping_scale: f64,
    pub max_episode_len: usize,
    pub sticky_action_prob: f64,
    pub trap: Option<TrapRegion>,
    pub noise_dims: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: None,
            kind: EnvKind::GridSparse,
            height: 8,
            width: 8,
            layout: Layout::Open,
            extra_walls: Vec::new(),
            start: [0, 0],
            goal: None,
            goal_reward: 1.0,
            step_penalty: 0.0,
            shaping_scale: 0.1,
            max_episode_len: 100,
            sticky_action_prob: 0.0,
            trap: None,
            noise_dims: 8,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn goal_cell(&self) -> (usize, usize) {
        let g = self.goal.unwrap_or([self.height.saturating_sub(1), self.width.saturating_sub(1)]);
        (g[0], g[1])
    }

    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let kind = match self.kind {
            EnvKind::GridSparse => "grid_sparse",
            EnvKind::GridDense => "grid_dense",
            EnvKind::NoisyTv => "noisy_tv",
        };
        format!("{kind}-{}x{}-p{}", self.height, self.width, self.sticky_action_prob)
    }

    /// Length of one (unstacked) observation.
    pub fn obs_dim(&self) -> usize {
        let noise = if self.kind == EnvKind::NoisyTv { self.noise_dims } else { 0 };
        self.height * self.width * CHANNELS + noise
    }

    pub fn walls(&self) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let mut walls = vec![false; h * w];
        match self.layout {
            Layout::Open => {}
            Layout::FourRooms => {
                let (mr, mc) = (h / 2, w / 2);
                for c in 0..w {
                    walls[mr * w + c] = true;
                }
                for r in 0..h {
                    walls[r * w + mc] = true;
                }
                walls[mr * w + mc / 2] = false;
                walls[mr * w + (mc + w) / 2] = false;
                walls[(mr / 2) * w + mc] = false;
                walls[((mr + h) / 2) * w + mc] = false;
            }
            Layout::Zigzag => {
                for (k, r) in (2..h.saturating_sub(1)).step_by(3).enumerate() {
                    let gap = if k % 2 == 0 { w - 1 } else { 0 };
                    for c in 0..w {
                        walls[r * w + c] = c != gap;
                    }
                }
            }
        }
        for &[r, c] in &self.extra_walls {
            if r < h && c < w {
                walls[r * w + c] = true;
            }
        }
        walls
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if self.height < 2 || self.width < 2 {
            return fail(format!("grid must be at least 2x2, got {}x{}", self.height, self.width));
        }
        if self.max_episode_len < 1 {
            return fail("max_episode_len must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.sticky_action_prob) {
            return fail(format!("sticky_action_prob {} not in [0, 1)", self.sticky_action_prob));
        }
        let in_grid = |[r, c]: [usize; 2]| r < self.height && c < self.width;
        let goal = self.goal_cell();
        if !in_grid(self.start) || !in_grid([goal.0, goal.1]) {
            return fail("start and goal must lie inside the grid".into());
        }
        if (self.start[0], self.start[1]) == goal {
            return fail("start and goal must differ".into());
        }
        let walls = self.walls();
        if walls[self.start[0] * self.width + self.start[1]] || walls[goal.0 * self.width + goal.1] {
            return fail("start or goal is inside a wall".into());
        }
        if let Some(t) = self.trap {
            if t.height == 0 || t.width == 0 || t.top + t.height > self.height || t.left + t.width > self.width {
                return fail(format!("trap region {t:?} outside the grid"));
            }
            if t.contains((self.start[0], self.start[1])) || t.contains(goal) {
                return fail("trap region must not contain start or goal".into());
            }
        }
        if self.kind == EnvKind::NoisyTv {
            if self.trap.is_none() {
                return fail("noisy_tv needs a trap region".into());
            }
            if self.noise_dims == 0 {
                return fail("noisy_tv needs noise_dims > 0".into());
            }
        }
        if distances_to(goal, self.height, self.width, &walls)[self.start[0] * self.width + self.start[1]].is_none() {
            return fail("goal unreachable from start".into());
        }
        Ok(())
    }

    /// 8×8 open grid with distance shaping.
    pub fn dense_8x8() -> Self {
        EnvConfig {
            kind: EnvKind::GridDense,
            ..EnvConfig::default()
        }
    }

    /// 12×12 four-room maze, reward only at the goal.
    pub fn sparse_maze_12x12() -> Self {
        EnvConfig {
            kind: EnvKind::GridSparse,
            height: 12,
            width: 12,
            layout: Layout::FourRooms,
            max_episode_len: 200,
            ..EnvConfig::default()
        }
    }

    /// 8×8 open grid with a 2×2 noisy-TV trap next to the start.
    pub fn noisy_tv_8x8() -> Self {
        EnvConfig {
            kind: EnvKind::NoisyTv,
            trap: Some(TrapRegion {
                top: 0,
                left: 2,
                height: 2,
                width: 2,
            }),
            ..EnvConfig::default()
        }
    }
}

/// Breadth-first maze distances to `target`; `None` for walls and
/// unreachable cells.
fn distances_to(target: (usize, usize), h: usize, w: usize, walls: &[bool]) -> Vec<Option<usize>> {
    let mut dist = vec![None; h * w];
    let mut queue = VecDeque::new();
    dist[target.0 * w + target.1] = Some(0);
    queue.push_back(target);
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r * w + c].expect("queued cells have a distance");
        for a in 0..NUM_ACTIONS {
            if let Some((nr, nc)) = neighbor((r, c), a, h, w) {
                let i = nr * w + nc;
                if !walls[i] && dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    queue.push_back((nr, nc));
                }
            }
        }
    }
    dist
}

/// Actions: 0 up, 1 down, 2 left, 3 right.
fn neighbor((r, c): (usize, usize), action: usize, h: usize, w: usize) -> Option<(usize, usize)> {
    match action {
        0 if r > 0 => Some((r - 1, c)),
        1 if r + 1 < h => Some((r + 1, c)),
        2 if c > 0 => Some((r, c - 1)),
        3 if c + 1 < w => Some((r, c + 1)),
        _ => None,
    }
}

/// Grid maze covering the sparse, dense and noisy-TV kinds.
#[derive(Clone, Debug)]
pub struct GridWorld {
    config: EnvConfig,
    walls: Vec<bool>,
    distance: Vec<Option<usize>>,
    static_obs: Vec<f64>,
    goal: (usize, usize),
    agent: (usize, usize),
    noise: Vec<f64>,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl GridWorld {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let (h, w) = (config.height, config.width);
        let walls = config.walls();
        let goal = config.goal_cell();
        let distance = distances_to(goal, h, w, &walls);
        let plane = h * w;
        let mut static_obs = vec![0.0; config.obs_dim()];
        static_obs[CH_GOAL * plane + goal.0 * w + goal.1] = 1.0;
        for (i, &wall) in walls.iter().enumerate() {
            if wall {
                static_obs[CH_WALL * plane + i] = 1.0;
            }
        }
        if let Some(t) = config.trap {
            for r in t.top..t.top + t.height {
                for c in t.left..t.left + t.width {
                    static_obs[CH_TRAP * plane + r * w + c] = 1.0;
                }
            }
        }
        let noise_dims = if config.kind == EnvKind::NoisyTv { config.noise_dims } else { 0 };
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = (config.start[0], config.start[1]);
        Ok(GridWorld {
            config,
            walls,
            distance,
            static_obs,
            goal,
            agent,
            noise: vec![0.0; noise_dims],
            steps: 0,
            done: false,
            rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    pub fn in_trap(&self) -> bool {
        self.config.trap.is_some_and(|t| t.contains(self.agent))
    }

    /// Maze distance from the agent to the goal.
    pub fn distance_to_goal(&self) -> usize {
        self.distance[self.agent.0 * self.config.width + self.agent.1].expect("agent cell is reachable")
    }

    pub fn observe(&self) -> Observation {
        let mut obs = self.static_obs.clone();
        let w = self.config.width;
        obs[CH_AGENT * self.config.height * w + self.agent.0 * w + self.agent.1] = 1.0;
        let base = self.config.height * w * CHANNELS;
        obs[base..].copy_from_slice(&self.noise);
        obs
    }

    /// Moves the agent into `pos` directly (tests and diagnostics).
    pub fn place_agent(&mut self, pos: (usize, usize)) -> Result<()> {
        let (r, c) = pos;
        if r >= self.config.height || c >= self.config.width || self.walls[r * self.config.width + c] {
            return Err(Error::config(format!("cannot place agent at {pos:?}")));
        }
        self.agent = pos;
        Ok(())
    }
}

impl Env for GridWorld {
    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn reset(&mut self, seed: Option<u64>) -> Observation {
        if let Some(s) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(s);
        }
        self.agent = (self.config.start[0], self.config.start[1]);
        self.noise.iter_mut().for_each(|v| *v = 0.0);
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if action >= NUM_ACTIONS {
            return Err(Error::IndexOutOfRange {
                index: action,
                len: NUM_ACTIONS,
            });
        }
        let state = self.observe();
        let (h, w) = (self.config.height, self.config.width);
        let before = self.distance_to_goal();
        if let Some((r, c)) = neighbor(self.agent, action, h, w) {
            if !self.walls[r * w + c] {
                self.agent = (r, c);
            }
        }
        self.steps += 1;

        let success = self.agent == self.goal;
        let mut reward = if success { self.config.goal_reward } else { -self.config.step_penalty };
        if self.config.kind == EnvKind::GridDense {
            reward += self.config.shaping_scale * (before as f64 - self.distance_to_goal() as f64);
        }
        let in_trap = self.in_trap();
        if !self.noise.is_empty() {
            if in_trap {
                for v in &mut self.noise {
                    *v = self.rng.gen::<f64>();
                }
            } else {
                self.noise.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let truncated = !success && self.steps >= self.config.max_episode_len;
        self.done = success || truncated;
        Ok(Transition {
            state,
            action,
            extrinsic_reward: reward,
            next_state: self.observe(),
            done: self.done,
            info: StepInfo {
                in_trap,
                repeated: false,
                executed_action: action,
                success,
                truncated,
            },
        })
    }
}
