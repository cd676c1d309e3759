//! Networked multi-agent MDP, product policies, linear features and trajectory
//! sampling.
//!
//! Tensors are stored flat in row-major order so instances serialize to a
//! compact JSON document and can be replayed exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Tolerance for "sums to one" checks on probability rows.
pub const PROB_TOL: f64 = 1e-12;

/// Largest joint-action space stored densely.
pub const MAX_DENSE_JOINT_ACTIONS: usize = 4096;

/// Transition and reward tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Dynamics {
    /// Transitions and mean rewards depend on the global state only.
    /// `transition` is `S x S`, `rewards` is `N x S`.
    Factored {
        transition: Vec<f64>,
        rewards: Vec<f64>,
    },
    /// Action-dependent tables. `transition` is `S x A x S` and `rewards` is
    /// `N x S x A`, with `A` the joint-action count.
    Full {
        transition: Vec<f64>,
        rewards: Vec<f64>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMdp {
    num_agents: usize,
    num_states: usize,
    actions_per_agent: Vec<usize>,
    dynamics: Dynamics,
    noise_half_width: f64,
    reward_bound: f64,
    #[serde(default)]
    seed: Option<u64>,
}

impl TryFrom<RawMdp> for MultiAgentMdp {
    type Error = Error;

    fn try_from(raw: RawMdp) -> Result<Self> {
        MultiAgentMdp::new(
            raw.num_agents,
            raw.num_states,
            raw.actions_per_agent,
            raw.dynamics,
            raw.noise_half_width,
            raw.reward_bound,
        )
        .map(|m| m.with_seed(raw.seed))
    }
}

/// Tabular networked multi-agent MDP with per-agent reward tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp")]
pub struct MultiAgentMdp {
    num_agents: usize,
    num_states: usize,
    actions_per_agent: Vec<usize>,
    dynamics: Dynamics,
    noise_half_width: f64,
    reward_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl MultiAgentMdp {
    pub fn new(
        num_agents: usize,
        num_states: usize,
        actions_per_agent: Vec<usize>,
        dynamics: Dynamics,
        noise_half_width: f64,
        reward_bound: f64,
    ) -> Result<Self> {
        if num_agents == 0 || num_states == 0 {
            return Err(Error::config("agent and state counts must be positive"));
        }
        if actions_per_agent.len() != num_agents {
            return Err(Error::config(format!(
                "expected {num_agents} action counts, got {}",
                actions_per_agent.len()
            )));
        }
        if actions_per_agent.contains(&0) {
            return Err(Error::config("every agent needs at least one action"));
        }
        if !(noise_half_width >= 0.0) || !noise_half_width.is_finite() {
            return Err(Error::config("noise half-width must be finite and >= 0"));
        }
        let joint = joint_action_count(&actions_per_agent);
        let s = num_states;
        let (transition, rewards, per_row, reward_len) = match &dynamics {
            Dynamics::Factored {
                transition,
                rewards,
            } => (transition, rewards, s, num_agents * s),
            Dynamics::Full {
                transition,
                rewards,
            } => {
                let joint = joint.ok_or_else(|| Error::config("joint action space overflows"))?;
                if joint > MAX_DENSE_JOINT_ACTIONS {
                    return Err(Error::config(format!(
                        "{joint} joint actions exceed the dense limit of {MAX_DENSE_JOINT_ACTIONS}; use factored dynamics"
                    )));
                }
                (transition, rewards, s, num_agents * s * joint)
            }
        };
        let rows = match &dynamics {
            Dynamics::Factored { .. } => s,
            Dynamics::Full { .. } => s * joint.unwrap_or(0),
        };
        if transition.len() != rows * per_row {
            return Err(Error::config(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                rows * per_row
            )));
        }
        if rewards.len() != reward_len {
            return Err(Error::config(format!(
                "reward table has {} entries, expected {reward_len}",
                rewards.len()
            )));
        }
        for (r, row) in transition.chunks(per_row).enumerate() {
            check_probability_row(row).map_err(|d| Error::config(format!("transition row {r}: {d}")))?;
        }
        for &r in rewards {
            if !r.is_finite() || r.abs() + noise_half_width > reward_bound {
                return Err(Error::Assumption {
                    assumption: "bounded rewards",
                    detail: format!(
                        "|{r}| + {noise_half_width} exceeds reward bound {reward_bound}"
                    ),
                });
            }
        }
        Ok(Self {
            num_agents,
            num_states,
            actions_per_agent,
            dynamics,
            noise_half_width,
            reward_bound,
            seed: None,
        })
    }

    /// Records the generator seed the instance was built from.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions_per_agent(&self) -> &[usize] {
        &self.actions_per_agent
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn noise_half_width(&self) -> f64 {
        self.noise_half_width
    }

    /// Uniform bound on realized rewards (`r_max`).
    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Number of joint actions, `None` on overflow.
    pub fn joint_actions(&self) -> Option<usize> {
        joint_action_count(&self.actions_per_agent)
    }

    /// Mean reward of `agent` in `state` under joint action `action`.
    pub fn mean_reward(&self, agent: usize, state: usize, action: usize) -> f64 {
        match &self.dynamics {
            Dynamics::Factored { rewards, .. } => rewards[agent * self.num_states + state],
            Dynamics::Full { rewards, .. } => {
                let joint = self.joint_actions().unwrap_or(0);
                rewards[(agent * self.num_states + state) * joint + action]
            }
        }
    }

    /// Next-state distribution `P(. | state, action)`.
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let s = self.num_states;
        match &self.dynamics {
            Dynamics::Factored { transition, .. } => &transition[state * s..(state + 1) * s],
            Dynamics::Full { transition, .. } => {
                let joint = self.joint_actions().unwrap_or(0);
                let row = state * joint + action;
                &transition[row * s..(row + 1) * s]
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mdp serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }
}

fn joint_action_count(actions: &[usize]) -> Option<usize> {
    actions.iter().try_fold(1usize, |acc, &a| acc.checked_mul(a))
}

fn check_probability_row(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("entry {p} outside [0, 1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Mixed-radix encoding of per-agent actions; agent 0 is the least
/// significant digit.
pub fn encode_joint_action(actions: &[usize], actions_per_agent: &[usize]) -> usize {
    let mut index = 0;
    let mut radix = 1;
    for (&a, &count) in actions.iter().zip(actions_per_agent) {
        index += a * radix;
        radix *= count;
    }
    index
}

pub fn decode_joint_action(mut index: usize, actions_per_agent: &[usize]) -> Vec<usize> {
    actions_per_agent
        .iter()
        .map(|&count| {
            let a = index % count;
            index /= count;
            a
        })
        .collect()
}

/// Product policy `pi(a|s) = prod_i pi^i(a^i|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct JointPolicy {
    num_states: usize,
    actions_per_agent: Vec<usize>,
    /// Per agent, a row-major `S x |A^i|` table.
    probs: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    num_states: usize,
    actions_per_agent: Vec<usize>,
    probs: Vec<Vec<f64>>,
}

impl TryFrom<RawPolicy> for JointPolicy {
    type Error = Error;

    fn try_from(raw: RawPolicy) -> Result<Self> {
        JointPolicy::new(raw.num_states, raw.actions_per_agent, raw.probs)
    }
}

impl JointPolicy {
    pub fn new(num_states: usize, actions_per_agent: Vec<usize>, probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.len() != actions_per_agent.len() {
            return Err(Error::config("one probability table per agent required"));
        }
        for (i, (table, &count)) in probs.iter().zip(&actions_per_agent).enumerate() {
            if count == 0 || table.len() != num_states * count {
                return Err(Error::config(format!(
                    "policy table of agent {i} has {} entries, expected {}",
                    table.len(),
                    num_states * count
                )));
            }
            for (s, row) in table.chunks(count).enumerate() {
                check_probability_row(row)
                    .map_err(|d| Error::config(format!("policy of agent {i} at state {s}: {d}")))?;
            }
        }
        Ok(Self {
            num_states,
            actions_per_agent,
            probs,
        })
    }

    pub fn uniform(num_states: usize, actions_per_agent: Vec<usize>) -> Self {
        let probs = actions_per_agent
            .iter()
            .map(|&count| vec![1.0 / count as f64; num_states * count])
            .collect();
        Self {
            num_states,
            actions_per_agent,
            probs,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.actions_per_agent.len()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions_per_agent(&self) -> &[usize] {
        &self.actions_per_agent
    }

    /// `pi^i(. | s)`.
    pub fn agent_distribution(&self, agent: usize, state: usize) -> &[f64] {
        let count = self.actions_per_agent[agent];
        &self.probs[agent][state * count..(state + 1) * count]
    }

    /// Probability of a joint action given as its mixed-radix index.
    pub fn joint_probability(&self, state: usize, joint_action: usize) -> f64 {
        decode_joint_action(joint_action, &self.actions_per_agent)
            .iter()
            .enumerate()
            .map(|(i, &a)| self.agent_distribution(i, state)[a])
            .product()
    }
}

/// Linear feature map, one row `phi(s)` per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    num_states: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(num_states: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != num_states * dim {
            return Err(Error::config(format!(
                "feature table has {} entries, expected {num_states} x {dim}",
                values.len()
            )));
        }
        Ok(Self {
            num_states,
            dim,
            values,
        })
    }

    pub fn from_matrix(phi: &DMatrix<f64>) -> Self {
        let values = phi.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        Self {
            num_states: phi.nrows(),
            dim: phi.ncols(),
            values,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phi(&self, state: usize) -> &[f64] {
        &self.values[state * self.dim..(state + 1) * self.dim]
    }

    /// `|S| x n` feature matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.num_states, self.dim, &self.values)
    }
}

/// One failed feature requirement.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureViolation {
    /// `n >= |S|`.
    TooManyFeatures { dim: usize, num_states: usize },
    RowNorm { state: usize, norm: f64 },
    RankDeficient { smallest_singular_value: f64 },
    /// Some `u` gives `Phi u = 1`.
    RepresentsConstant { residual: f64 },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureReport {
    pub violations: Vec<FeatureViolation>,
}

impl FeatureReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_features(fm: &FeatureMap) -> FeatureReport {
    let mut violations = Vec::new();
    if fm.dim >= fm.num_states {
        violations.push(FeatureViolation::TooManyFeatures {
            dim: fm.dim,
            num_states: fm.num_states,
        });
    }
    for s in 0..fm.num_states {
        let norm = fm.phi(s).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1.0 + 1e-12 {
            violations.push(FeatureViolation::RowNorm { state: s, norm });
        }
    }
    let phi = fm.matrix();
    let svd = phi.clone().svd(true, true);
    let smallest = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smallest > 1e-10) || fm.dim > fm.num_states {
        violations.push(FeatureViolation::RankDeficient {
            smallest_singular_value: if fm.dim > fm.num_states { 0.0 } else { smallest },
        });
    }
    let ones = DVector::from_element(fm.num_states, 1.0);
    let residual = match svd.solve(&ones, 1e-12) {
        Ok(u) => (&phi * u - &ones).norm(),
        Err(_) => f64::NAN,
    };
    if !(residual > 1e-10) {
        violations.push(FeatureViolation::RepresentsConstant { residual });
    }
    FeatureReport { violations }
}

/// The state chain induced by a policy, with expected rewards per state.
#[derive(Clone, Debug)]
pub struct InducedChain {
    /// `P^pi(s, s')`.
    pub transition: DMatrix<f64>,
    /// `N x S`: expected reward of agent `i` in state `s` under the policy.
    pub agent_rewards: DMatrix<f64>,
    /// Expected team-average reward per state.
    pub mean_reward: DVector<f64>,
}

pub fn induced_chain(mdp: &MultiAgentMdp, policy: &JointPolicy) -> Result<InducedChain> {
    if policy.num_states != mdp.num_states || policy.actions_per_agent != mdp.actions_per_agent {
        return Err(Error::config("policy shape does not match the MDP"));
    }
    let s = mdp.num_states;
    let n_agents = mdp.num_agents;
    let mut transition = DMatrix::zeros(s, s);
    let mut agent_rewards = DMatrix::zeros(n_agents, s);
    match &mdp.dynamics {
        Dynamics::Factored {
            transition: p,
            rewards,
        } => {
            transition = DMatrix::from_row_slice(s, s, p);
            agent_rewards = DMatrix::from_row_slice(n_agents, s, rewards);
        }
        Dynamics::Full { .. } => {
            let joint = mdp.joint_actions().unwrap_or(0);
            for state in 0..s {
                for a in 0..joint {
                    let pa = policy.joint_probability(state, a);
                    if pa == 0.0 {
                        continue;
                    }
                    for (next, &p) in mdp.transition_row(state, a).iter().enumerate() {
                        transition[(state, next)] += pa * p;
                    }
                    for i in 0..n_agents {
                        agent_rewards[(i, state)] += pa * mdp.mean_reward(i, state, a);
                    }
                }
            }
        }
    }
    let mean_reward = DVector::from_iterator(
        s,
        (0..s).map(|st| agent_rewards.column(st).sum() / n_agents as f64),
    );
    Ok(InducedChain {
        transition,
        agent_rewards,
        mean_reward,
    })
}

/// One sampled step of the shared trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    /// Realized per-agent rewards (mean plus noise).
    pub rewards: Vec<f64>,
}

/// Inverse-CDF draw from a discrete distribution.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

pub fn sample_step(
    mdp: &MultiAgentMdp,
    policy: &JointPolicy,
    state: usize,
    rng: &mut SimRng,
) -> Result<Transition> {
    if state >= mdp.num_states {
        return Err(Error::config(format!(
            "state {state} out of range (|S| = {})",
            mdp.num_states
        )));
    }
    let actions: Vec<usize> = (0..mdp.num_agents)
        .map(|i| sample_categorical(policy.agent_distribution(i, state), rng))
        .collect();
    let action = encode_joint_action(&actions, &mdp.actions_per_agent);
    let next_state = sample_categorical(mdp.transition_row(state, action), rng);
    let h = mdp.noise_half_width;
    let rewards = (0..mdp.num_agents)
        .map(|i| {
            let mean = mdp.mean_reward(i, state, action);
            if h > 0.0 {
                mean + rng.random_range(-h..=h)
            } else {
                mean
            }
        })
        .collect();
    Ok(Transition {
        state,
        action,
        next_state,
        rewards,
    })
}

/// A source of trajectories observed by every agent: global state, feature
/// vector and one private reward per agent.
pub trait Environment: Sync {
    type State: Clone + Send;

    fn num_agents(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn reward_bound(&self) -> f64;
    fn initial_state(&self, rng: &mut SimRng) -> Self::State;
    fn features_into(&self, state: &Self::State, out: &mut [f64]);
    /// Advances one step, writing realized rewards into `rewards`.
    fn step(&self, state: &Self::State, rng: &mut SimRng, rewards: &mut [f64]) -> Self::State;
}

/// A tabular MDP together with the evaluated policy and its features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularProblem {
    pub mdp: MultiAgentMdp,
    pub policy: JointPolicy,
    pub features: FeatureMap,
}

impl TabularProblem {
    pub fn new(mdp: MultiAgentMdp, policy: JointPolicy, features: FeatureMap) -> Result<Self> {
        if policy.num_states != mdp.num_states || policy.actions_per_agent != mdp.actions_per_agent {
            return Err(Error::config("policy shape does not match the MDP"));
        }
        if features.num_states != mdp.num_states {
            return Err(Error::config("feature map must have one row per state"));
        }
        Ok(Self {
            mdp,
            policy,
            features,
        })
    }
}

impl Environment for TabularProblem {
    type State = usize;

    fn num_agents(&self) -> usize {
        self.mdp.num_agents
    }

    fn feature_dim(&self) -> usize {
        self.features.dim
    }

    fn reward_bound(&self) -> f64 {
        self.mdp.reward_bound
    }

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        rng.random_range(0..self.mdp.num_states)
    }

    fn features_into(&self, state: &usize, out: &mut [f64]) {
        out.copy_from_slice(self.features.phi(*state));
    }

    fn step(&self, state: &usize, rng: &mut SimRng, rewards: &mut [f64]) -> usize {
        let t = sample_step(&self.mdp, &self.policy, *state, rng).expect("state produced by the chain is in range");
        rewards.copy_from_slice(&t.rewards);
        t.next_state
    }
}
