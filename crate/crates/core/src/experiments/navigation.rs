//! Cooperative navigation on a grid. Agents wander under a uniform random
//! policy; each is rewarded by its distance to the nearest landmark and
//! penalized for sharing a cell with another agent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Environment;
use crate::rng::SimRng;

/// Number of moves: stay, left, right, down, up.
pub const NUM_ACTIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Stay,
    Left,
    Right,
    Down,
    Up,
}

impl Move {
    pub const ALL: [Move; NUM_ACTIONS] = [Move::Stay, Move::Left, Move::Right, Move::Down, Move::Up];

    fn delta(self) -> (i64, i64) {
        match self {
            Move::Stay => (0, 0),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
            Move::Down => (0, -1),
            Move::Up => (0, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavigationSpec {
    pub grid_size: usize,
    pub num_agents: usize,
    pub num_landmarks: usize,
    pub collision_penalty: f64,
    pub reward_bound: f64,
    /// Fixed landmark cells; drawn from the instance generator when absent.
    pub landmarks: Option<Vec<(i64, i64)>>,
}

impl Default for NavigationSpec {
    fn default() -> Self {
        Self {
            grid_size: 10,
            num_agents: 9,
            num_landmarks: 9,
            collision_penalty: 1.0,
            reward_bound: 2.0,
            landmarks: None,
        }
    }
}

/// Positions of all agents, `(x, y)` with `0 <= x, y < G`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NavState {
    pub positions: Vec<(i64, i64)>,
}

/// A navigation world with fixed landmarks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavEnv {
    spec: NavigationSpec,
    landmarks: Vec<(i64, i64)>,
}

fn manhattan(a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

impl NavEnv {
    pub fn new(spec: NavigationSpec, rng: &mut SimRng) -> Result<Self> {
        let g = spec.grid_size as i64;
        if spec.grid_size < 2 || spec.num_agents == 0 || spec.num_landmarks == 0 {
            return Err(Error::config("navigation needs a grid of size >= 2, agents and landmarks"));
        }
        if !(spec.reward_bound > 0.0) || !(spec.collision_penalty >= 0.0) {
            return Err(Error::config("reward bound must be positive and the penalty non-negative"));
        }
        let landmarks = match &spec.landmarks {
            Some(l) => {
                if l.len() != spec.num_landmarks {
                    return Err(Error::config(format!(
                        "expected {} landmarks, got {}",
                        spec.num_landmarks,
                        l.len()
                    )));
                }
                if l.iter().any(|&(x, y)| x < 0 || y < 0 || x >= g || y >= g) {
                    return Err(Error::config("landmark outside the grid"));
                }
                l.clone()
            }
            None => {
                if spec.num_landmarks > spec.grid_size * spec.grid_size {
                    return Err(Error::config("more landmarks than grid cells"));
                }
                let mut l = Vec::with_capacity(spec.num_landmarks);
                while l.len() < spec.num_landmarks {
                    let cell = (rng.random_range(0..g), rng.random_range(0..g));
                    if !l.contains(&cell) {
                        l.push(cell);
                    }
                }
                l
            }
        };
        Ok(Self { spec, landmarks })
    }

    pub fn spec(&self) -> &NavigationSpec {
        &self.spec
    }

    pub fn landmarks(&self) -> &[(i64, i64)] {
        &self.landmarks
    }

    /// Index of the landmark closest to `pos`, lowest index on ties.
    pub fn nearest_landmark(&self, pos: (i64, i64)) -> (i64, i64) {
        *self
            .landmarks
            .iter()
            .min_by_key(|&&l| manhattan(pos, l))
            .expect("at least one landmark")
    }

    /// Rewards at a given configuration.
    pub fn rewards(&self, state: &NavState, out: &mut [f64]) {
        let g = self.spec.grid_size as f64;
        for (i, &p) in state.positions.iter().enumerate() {
            let dist = manhattan(p, self.nearest_landmark(p)) as f64 / g;
            let collided = state.positions.iter().enumerate().any(|(j, &q)| j != i && q == p);
            let r = -dist - if collided { self.spec.collision_penalty } else { 0.0 };
            out[i] = r.clamp(-self.spec.reward_bound, 0.0);
        }
    }

    /// Moves every agent one cell (walls clamp) and returns the rewards at the
    /// resulting configuration.
    pub fn nav_step(&self, state: &NavState, moves: &[Move], rewards: &mut [f64]) -> NavState {
        let hi = self.spec.grid_size as i64 - 1;
        let positions = state
            .positions
            .iter()
            .zip(moves)
            .map(|(&(x, y), m)| {
                let (dx, dy) = m.delta();
                ((x + dx).clamp(0, hi), (y + dy).clamp(0, hi))
            })
            .collect();
        let next = NavState { positions };
        self.rewards(&next, rewards);
        next
    }

    /// Agent positions scaled to `[0, 1]`, then offsets to each agent's
    /// nearest landmark scaled to `[-1, 1]`, all divided by `sqrt(4N)` so the
    /// vector has norm at most one.
    pub fn nav_features(&self, state: &NavState, out: &mut [f64]) {
        let n = state.positions.len();
        let span = (self.spec.grid_size - 1) as f64;
        let scale = 1.0 / ((4 * n) as f64).sqrt();
        for (i, &p) in state.positions.iter().enumerate() {
            let l = self.nearest_landmark(p);
            out[2 * i] = p.0 as f64 / span * scale;
            out[2 * i + 1] = p.1 as f64 / span * scale;
            out[2 * n + 2 * i] = (l.0 - p.0) as f64 / span * scale;
            out[2 * n + 2 * i + 1] = (l.1 - p.1) as f64 / span * scale;
        }
    }
}

impl Environment for NavEnv {
    type State = NavState;

    fn num_agents(&self) -> usize {
        self.spec.num_agents
    }

    fn feature_dim(&self) -> usize {
        4 * self.spec.num_agents
    }

    fn reward_bound(&self) -> f64 {
        self.spec.reward_bound
    }

    fn initial_state(&self, rng: &mut SimRng) -> NavState {
        let g = self.spec.grid_size as i64;
        NavState {
            positions: (0..self.spec.num_agents)
                .map(|_| (rng.random_range(0..g), rng.random_range(0..g)))
                .collect(),
        }
    }

    fn features_into(&self, state: &NavState, out: &mut [f64]) {
        self.nav_features(state, out);
    }

    fn step(&self, state: &NavState, rng: &mut SimRng, rewards: &mut [f64]) -> NavState {
        let moves: Vec<Move> = (0..self.spec.num_agents)
            .map(|_| Move::ALL[rng.random_range(0..NUM_ACTIONS)])
            .collect();
        self.nav_step(state, &moves, rewards)
    }
}
