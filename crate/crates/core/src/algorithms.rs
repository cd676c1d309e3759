//! Decentralized average-reward TD(0) with linear features.
//!
//! Three strategies share one sampled trajectory:
//!
//! * local TD-update: `K` local steps per agent between consensus rounds,
//! * vanilla: consensus after every sample,
//! * batching: one update per round from the mean increment of `M` samples
//!   evaluated at frozen parameters.
//!
//! A single-agent runner is provided as the centralized reference.
//!
//! Agents only ever see the shared state features and their own reward. The
//! reward trackers `mu^i` are never averaged.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Recorder, RoundSnapshot, TraceOptions};
use crate::model::Environment;
use crate::rng::{rng_for_stream, SimRng, TRAJECTORY_STREAM};
use crate::topology::{step_size_condition, ConsensusMatrix};

/// Stream for random parameter initialization.
pub const INIT_STREAM: u64 = 2;

/// One transition as seen by the team.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sample {
    pub phi: Vec<f64>,
    pub phi_next: Vec<f64>,
    pub rewards: Vec<f64>,
}

/// Anything that produces the shared trajectory, one sample at a time.
pub trait SampleSource {
    fn num_agents(&self) -> usize;
    fn feature_dim(&self) -> usize;
    /// Overwrites `out` with the next transition.
    fn fill(&mut self, out: &mut Sample);
}

/// Rolls out an [`Environment`] from a seeded generator. The end state of one
/// round is the start state of the next.
pub struct Trajectory<'a, E: Environment> {
    env: &'a E,
    state: E::State,
    rng: SimRng,
    phi: Vec<f64>,
}

impl<'a, E: Environment> Trajectory<'a, E> {
    pub fn new(env: &'a E, mut rng: SimRng) -> Self {
        let state = env.initial_state(&mut rng);
        let mut phi = vec![0.0; env.feature_dim()];
        env.features_into(&state, &mut phi);
        Self {
            env,
            state,
            rng,
            phi,
        }
    }

    /// Trajectory driven by `seed` on the dedicated trajectory stream.
    pub fn seeded(env: &'a E, seed: u64) -> Self {
        Self::new(env, rng_for_stream(seed, TRAJECTORY_STREAM))
    }

    pub fn state(&self) -> &E::State {
        &self.state
    }
}

impl<E: Environment> SampleSource for Trajectory<'_, E> {
    fn num_agents(&self) -> usize {
        self.env.num_agents()
    }

    fn feature_dim(&self) -> usize {
        self.env.feature_dim()
    }

    fn fill(&mut self, out: &mut Sample) {
        out.rewards.resize(self.env.num_agents(), 0.0);
        let next = self.env.step(&self.state, &mut self.rng, &mut out.rewards);
        out.phi.clear();
        out.phi.extend_from_slice(&self.phi);
        self.env.features_into(&next, &mut self.phi);
        out.phi_next.clear();
        out.phi_next.extend_from_slice(&self.phi);
        self.state = next;
    }
}

/// Keeps a copy of every sample drawn from the inner source.
pub struct Recording<S> {
    inner: S,
    pub samples: Vec<Sample>,
}

impl<S: SampleSource> Recording<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            samples: Vec::new(),
        }
    }
}

impl<S: SampleSource> SampleSource for Recording<S> {
    fn num_agents(&self) -> usize {
        self.inner.num_agents()
    }

    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn fill(&mut self, out: &mut Sample) {
        self.inner.fill(out);
        self.samples.push(out.clone());
    }
}

/// Replays recorded samples; panics when exhausted.
pub struct Replay {
    samples: Vec<Sample>,
    pos: usize,
    agents: usize,
    dim: usize,
}

impl Replay {
    pub fn new(samples: Vec<Sample>) -> Self {
        let agents = samples.first().map_or(0, |s| s.rewards.len());
        let dim = samples.first().map_or(0, |s| s.phi.len());
        Self {
            samples,
            pos: 0,
            agents,
            dim,
        }
    }

    /// Replays with each reward vector collapsed to its team average, as seen
    /// by a single centralized learner.
    pub fn team_average(samples: &[Sample]) -> Self {
        Self::new(
            samples
                .iter()
                .map(|s| Sample {
                    phi: s.phi.clone(),
                    phi_next: s.phi_next.clone(),
                    rewards: vec![s.rewards.iter().sum::<f64>() / s.rewards.len() as f64],
                })
                .collect(),
        )
    }
}

impl SampleSource for Replay {
    fn num_agents(&self) -> usize {
        self.agents
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn fill(&mut self, out: &mut Sample) {
        out.clone_from(&self.samples[self.pos]);
        self.pos += 1;
    }
}

/// One agent's learner state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub w: Vec<f64>,
    pub mu: f64,
}

/// `delta = r - mu + phi(s')^T w - phi(s)^T w`.
pub fn td_error(w: &[f64], mu: f64, phi: &[f64], phi_next: &[f64], reward: f64) -> f64 {
    let mut v = 0.0;
    for ((wi, a), b) in w.iter().zip(phi_next).zip(phi) {
        v += wi * (a - b);
    }
    reward - mu + v
}

/// `w <- w + beta delta phi(s)`.
pub fn local_td_update(w: &mut [f64], phi: &[f64], delta: f64, beta: f64) {
    let step = beta * delta;
    for (wi, p) in w.iter_mut().zip(phi) {
        *wi += step * p;
    }
}

/// `mu <- (1 - beta) mu + beta r`, evaluated as `mu + beta (r - mu)` so that
/// `mu == r` is an exact fixed point.
pub fn mu_update(mu: f64, reward: f64, beta: f64) -> f64 {
    mu + beta * (reward - mu)
}

/// `w^i <- sum_j A_ij w^j` for the `n x N` parameter matrix.
pub fn consensus_step(params: &DMatrix<f64>, a: &ConsensusMatrix) -> Result<DMatrix<f64>> {
    if params.ncols() != a.num_agents() {
        return Err(Error::config(format!(
            "{} agents but a {}x{} consensus matrix",
            params.ncols(),
            a.num_agents(),
            a.num_agents()
        )));
    }
    Ok(params * a.weights().transpose())
}

/// Same as [`consensus_step`], writing into `out` without allocating.
fn consensus_into(params: &DMatrix<f64>, a: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    let agents = params.ncols();
    out.fill(0.0);
    for i in 0..agents {
        for j in 0..agents {
            let aij = a[(i, j)];
            if aij != 0.0 {
                let src = params.column(j);
                let mut dst = out.column_mut(i);
                dst.axpy(aij, &src, 1.0);
            }
        }
    }
}

/// Which decentralized strategy to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    LocalTd,
    Vanilla,
    Batching,
    /// Single centralized learner.
    SingleAgent,
}

/// Parameter initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum InitSpec {
    /// `w = 0`, `mu = 0` for every agent.
    #[default]
    Zero,
    /// Same `w` and `mu` for every agent.
    Constant { w: Vec<f64>, mu: f64 },
    /// Independent uniform draws in `[-w_half_width, w_half_width]` and
    /// `[-mu_half_width, mu_half_width]` per agent and coordinate.
    Uniform { w_half_width: f64, mu_half_width: f64 },
    PerAgent { agents: Vec<AgentState> },
}


impl InitSpec {
    /// Initial `(n x N params, mu)`.
    pub fn materialize(&self, dim: usize, agents: usize, seed: u64) -> Result<(DMatrix<f64>, Vec<f64>)> {
        match self {
            InitSpec::Zero => Ok((DMatrix::zeros(dim, agents), vec![0.0; agents])),
            InitSpec::Constant { w, mu } => {
                if w.len() != dim {
                    return Err(Error::config(format!("initial w has length {}, expected {dim}", w.len())));
                }
                let col = DVector::from_column_slice(w);
                Ok((DMatrix::from_columns(&vec![col; agents]), vec![*mu; agents]))
            }
            InitSpec::Uniform {
                w_half_width,
                mu_half_width,
            } => {
                let mut rng = rng_for_stream(seed, INIT_STREAM);
                let mut draw = |h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
                let mut params = DMatrix::zeros(dim, agents);
                let mut mu = vec![0.0; agents];
                for i in 0..agents {
                    for a in 0..dim {
                        params[(a, i)] = draw(*w_half_width);
                    }
                    mu[i] = draw(*mu_half_width);
                }
                Ok((params, mu))
            }
            InitSpec::PerAgent { agents: states } => {
                if states.len() != agents || states.iter().any(|s| s.w.len() != dim) {
                    return Err(Error::config("per-agent initialization does not match the team shape"));
                }
                let params = DMatrix::from_iterator(dim, agents, states.iter().flat_map(|s| s.w.iter().copied()));
                Ok((params, states.iter().map(|s| s.mu).collect()))
            }
        }
    }
}

/// Parameters of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: AlgorithmKind,
    pub beta: f64,
    /// Local steps `K` per round (local TD and single-agent snapshots).
    pub local_steps: usize,
    /// Communication rounds `L`.
    pub rounds: usize,
    /// Batch size `M` (batching only).
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitSpec,
}

impl RunConfig {
    pub fn local_td(beta: f64, local_steps: usize, rounds: usize, seed: u64) -> Self {
        Self {
            kind: AlgorithmKind::LocalTd,
            beta,
            local_steps,
            rounds,
            batch_size: 1,
            seed,
            init: InitSpec::Zero,
        }
    }

    pub fn vanilla(beta: f64, rounds: usize, seed: u64) -> Self {
        Self {
            kind: AlgorithmKind::Vanilla,
            local_steps: 1,
            ..Self::local_td(beta, 1, rounds, seed)
        }
    }

    pub fn batching(beta: f64, batch_size: usize, rounds: usize, seed: u64) -> Self {
        Self {
            kind: AlgorithmKind::Batching,
            batch_size,
            ..Self::local_td(beta, 1, rounds, seed)
        }
    }

    pub fn single_agent(beta: f64, steps_per_snapshot: usize, snapshots: usize, seed: u64) -> Self {
        Self {
            kind: AlgorithmKind::SingleAgent,
            ..Self::local_td(beta, steps_per_snapshot, snapshots, seed)
        }
    }

    pub fn with_init(mut self, init: InitSpec) -> Self {
        self.init = init;
        self
    }

    /// Samples consumed per communication round.
    pub fn period(&self) -> usize {
        match self.kind {
            AlgorithmKind::LocalTd | AlgorithmKind::SingleAgent => self.local_steps,
            AlgorithmKind::Vanilla => 1,
            AlgorithmKind::Batching => self.batch_size,
        }
    }

    pub fn total_samples(&self) -> usize {
        self.period() * self.rounds
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::config(format!("step size must be positive, got {}", self.beta)));
        }
        if self.local_steps == 0 || self.rounds == 0 || self.batch_size == 0 {
            return Err(Error::config("K, L and M must all be at least 1"));
        }
        Ok(())
    }
}

/// Everything recorded during one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub kind: AlgorithmKind,
    /// Samples per round.
    pub period: usize,
    /// Snapshot at round 0 (initial parameters) and after each round.
    pub rounds: Vec<RoundSnapshot>,
    /// `(w_bar, mu_bar)` after each local step, when requested.
    pub mean_path: Vec<(DVector<f64>, f64)>,
    /// Per-sample squared Bellman errors, when requested.
    pub sbe: Vec<f64>,
    pub initial_params: DMatrix<f64>,
    pub initial_mu: Vec<f64>,
    pub final_params: DMatrix<f64>,
    pub final_mu: Vec<f64>,
}

impl RunTrace {
    pub fn total_samples(&self) -> usize {
        self.rounds.last().map_or(0, |r| r.samples)
    }

    pub fn last(&self) -> &RoundSnapshot {
        self.rounds.last().expect("trace has the initial snapshot")
    }
}

fn check_finite(params: &DMatrix<f64>, mu: &[f64], round: usize, step: usize) -> Result<()> {
    for (agent, (w, m)) in params.column_iter().zip(mu).enumerate() {
        if !m.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { round, step, agent });
        }
    }
    Ok(())
}

struct Team {
    params: DMatrix<f64>,
    mu: Vec<f64>,
    scratch: DMatrix<f64>,
}

impl Team {
    fn new(params: DMatrix<f64>, mu: Vec<f64>) -> Self {
        let scratch = params.clone();
        Self { params, mu, scratch }
    }

    /// One local TD step for every agent on a shared sample.
    fn local_step(&mut self, sample: &Sample, beta: f64) {
        let n = self.params.nrows();
        let data = self.params.as_mut_slice();
        for (i, w) in data.chunks_mut(n).enumerate() {
            let r = sample.rewards[i];
            let delta = td_error(w, self.mu[i], &sample.phi, &sample.phi_next, r);
            self.mu[i] = mu_update(self.mu[i], r, beta);
            local_td_update(w, &sample.phi, delta, beta);
        }
    }

    fn consensus(&mut self, a: &DMatrix<f64>) {
        consensus_into(&self.params, a, &mut self.scratch);
        std::mem::swap(&mut self.params, &mut self.scratch);
    }
}

fn check_shapes(source: &dyn SampleSourceShape, a: Option<&ConsensusMatrix>) -> Result<()> {
    if let Some(a) = a {
        if a.num_agents() != source.agents() {
            return Err(Error::config(format!(
                "{} agents but a {}x{} consensus matrix",
                source.agents(),
                a.num_agents(),
                a.num_agents()
            )));
        }
        if !a.validate().is_doubly_stochastic {
            log::warn!("consensus matrix is not doubly stochastic; the team average will drift");
        }
    }
    Ok(())
}

trait SampleSourceShape {
    fn agents(&self) -> usize;
}

impl<S: SampleSource> SampleSourceShape for S {
    fn agents(&self) -> usize {
        self.num_agents()
    }
}

/// Runs any of the three decentralized strategies, or the single-agent
/// learner, selected by `cfg.kind`.
pub fn run<S: SampleSource>(
    source: &mut S,
    a: &ConsensusMatrix,
    cfg: &RunConfig,
    w_star: Option<&DVector<f64>>,
    options: &TraceOptions,
) -> Result<RunTrace> {
    match cfg.kind {
        AlgorithmKind::LocalTd => run_local_td(source, a, cfg, w_star, options),
        AlgorithmKind::Vanilla => run_vanilla(source, a, cfg, w_star, options),
        AlgorithmKind::Batching => run_batch_td(source, a, cfg, w_star, options),
        AlgorithmKind::SingleAgent => run_single_agent_td(source, cfg, w_star, options),
    }
}

fn finish(kind: AlgorithmKind, period: usize, recorder: Recorder, init: (DMatrix<f64>, Vec<f64>), team: Team) -> RunTrace {
    RunTrace {
        kind,
        period,
        rounds: recorder.rounds,
        mean_path: recorder.mean_path,
        sbe: recorder.sbe,
        initial_params: init.0,
        initial_mu: init.1,
        final_params: team.params,
        final_mu: team.mu,
    }
}

/// Decentralized TD with `K` local steps between consensus rounds.
pub fn run_local_td<S: SampleSource>(
    source: &mut S,
    a: &ConsensusMatrix,
    cfg: &RunConfig,
    w_star: Option<&DVector<f64>>,
    options: &TraceOptions,
) -> Result<RunTrace> {
    cfg.validate()?;
    check_shapes(source, Some(a))?;
    let (agents, dim) = (source.num_agents(), source.feature_dim());
    let check = step_size_condition(cfg.beta, cfg.local_steps, a.eta(), agents)?;
    if !check.ok {
        log::warn!(
            "beta*K = {} exceeds the consensus-error threshold {}; the bound does not apply",
            cfg.beta * cfg.local_steps as f64,
            check.threshold
        );
    }
    let init = cfg.init.materialize(dim, agents, cfg.seed)?;
    let mut team = Team::new(init.0.clone(), init.1.clone());
    let mut rec = Recorder::new(w_star.cloned(), options.clone());
    let mut sample = Sample::default();
    let k_steps = cfg.local_steps;
    rec.on_round(0, 0, &team.params, &team.mu);
    for l in 0..cfg.rounds {
        for k in 0..k_steps {
            source.fill(&mut sample);
            rec.on_sample(&team.params, &team.mu, &sample.phi, &sample.phi_next, &sample.rewards);
            team.local_step(&sample, cfg.beta);
            check_finite(&team.params, &team.mu, l, k)?;
            rec.on_step(&team.params, &team.mu);
        }
        team.consensus(a.weights());
        rec.on_round(l + 1, (l + 1) * k_steps, &team.params, &team.mu);
    }
    Ok(finish(AlgorithmKind::LocalTd, k_steps, rec, init, team))
}

/// Classic decentralized TD: one sample, one update, one consensus step.
pub fn run_vanilla<S: SampleSource>(
    source: &mut S,
    a: &ConsensusMatrix,
    cfg: &RunConfig,
    w_star: Option<&DVector<f64>>,
    options: &TraceOptions,
) -> Result<RunTrace> {
    cfg.validate()?;
    check_shapes(source, Some(a))?;
    let (agents, dim) = (source.num_agents(), source.feature_dim());
    let init = cfg.init.materialize(dim, agents, cfg.seed)?;
    let mut team = Team::new(init.0.clone(), init.1.clone());
    let mut rec = Recorder::new(w_star.cloned(), options.clone());
    let mut sample = Sample::default();
    rec.on_round(0, 0, &team.params, &team.mu);
    for t in 0..cfg.rounds {
        source.fill(&mut sample);
        rec.on_sample(&team.params, &team.mu, &sample.phi, &sample.phi_next, &sample.rewards);
        team.local_step(&sample, cfg.beta);
        check_finite(&team.params, &team.mu, t, 0)?;
        rec.on_step(&team.params, &team.mu);
        team.consensus(a.weights());
        rec.on_round(t + 1, t + 1, &team.params, &team.mu);
    }
    Ok(finish(AlgorithmKind::Vanilla, 1, rec, init, team))
}

/// Batching: per round, `M` TD increments at frozen `(w, mu)`, one update
/// with their mean, then consensus. The tracker moves once per batch
/// towards the batch-mean reward.
pub fn run_batch_td<S: SampleSource>(
    source: &mut S,
    a: &ConsensusMatrix,
    cfg: &RunConfig,
    w_star: Option<&DVector<f64>>,
    options: &TraceOptions,
) -> Result<RunTrace> {
    cfg.validate()?;
    check_shapes(source, Some(a))?;
    let (agents, dim) = (source.num_agents(), source.feature_dim());
    let init = cfg.init.materialize(dim, agents, cfg.seed)?;
    let mut team = Team::new(init.0.clone(), init.1.clone());
    let mut rec = Recorder::new(w_star.cloned(), options.clone());
    let mut sample = Sample::default();
    let m = cfg.batch_size;
    let mut increments = DMatrix::zeros(dim, agents);
    let mut reward_sums = vec![0.0; agents];
    rec.on_round(0, 0, &team.params, &team.mu);
    for l in 0..cfg.rounds {
        increments.fill(0.0);
        reward_sums.fill(0.0);
        for _ in 0..m {
            source.fill(&mut sample);
            rec.on_sample(&team.params, &team.mu, &sample.phi, &sample.phi_next, &sample.rewards);
            for i in 0..agents {
                let w = team.params.column(i);
                let delta = td_error(w.as_slice(), team.mu[i], &sample.phi, &sample.phi_next, sample.rewards[i]);
                let mut inc = increments.column_mut(i);
                for (x, p) in inc.iter_mut().zip(&sample.phi) {
                    *x += delta * p;
                }
                reward_sums[i] += sample.rewards[i];
            }
        }
        let scale = cfg.beta / m as f64;
        team.params += &increments * scale;
        for i in 0..agents {
            team.mu[i] = mu_update(team.mu[i], reward_sums[i] / m as f64, cfg.beta);
        }
        check_finite(&team.params, &team.mu, l, m - 1)?;
        rec.on_step(&team.params, &team.mu);
        team.consensus(a.weights());
        rec.on_round(l + 1, (l + 1) * m, &team.params, &team.mu);
    }
    Ok(finish(AlgorithmKind::Batching, m, rec, init, team))
}

/// Centralized average-reward TD(0) on a single reward stream. Snapshots are
/// taken every `cfg.local_steps` samples so traces line up with the
/// decentralized runs. With more than one reward per sample the first one is
/// used; wrap the source in [`Replay::team_average`] to feed the team mean.
pub fn run_single_agent_td<S: SampleSource>(
    source: &mut S,
    cfg: &RunConfig,
    w_star: Option<&DVector<f64>>,
    options: &TraceOptions,
) -> Result<RunTrace> {
    cfg.validate()?;
    let dim = source.feature_dim();
    let init = cfg.init.materialize(dim, 1, cfg.seed)?;
    let (mut w, mut mu) = (init.0.column(0).clone_owned(), init.1[0]);
    let mut rec = Recorder::new(w_star.cloned(), options.clone());
    let mut sample = Sample::default();
    let mut params = DMatrix::from_column_slice(dim, 1, w.as_slice());
    rec.on_round(0, 0, &params, &[mu]);
    for l in 0..cfg.rounds {
        for k in 0..cfg.local_steps {
            source.fill(&mut sample);
            let r = sample.rewards[0];
            rec.on_sample(&params, &[mu], &sample.phi, &sample.phi_next, &sample.rewards[..1]);
            let delta = td_error(w.as_slice(), mu, &sample.phi, &sample.phi_next, r);
            mu = mu_update(mu, r, cfg.beta);
            local_td_update(w.as_mut_slice(), &sample.phi, delta, cfg.beta);
            params.copy_from_slice(w.as_slice());
            check_finite(&params, &[mu], l, k)?;
            rec.on_step(&params, &[mu]);
        }
        rec.on_round(l + 1, (l + 1) * cfg.local_steps, &params, &[mu]);
    }
    let team = Team::new(params, vec![mu]);
    Ok(finish(AlgorithmKind::SingleAgent, cfg.local_steps, rec, init, team))
}

/// Convenience entry point: samples a fresh trajectory of `env` from
/// `cfg.seed` and runs the configured strategy.
pub fn run_on_env<E: Environment>(
    env: &E,
    a: &ConsensusMatrix,
    cfg: &RunConfig,
    w_star: Option<&DVector<f64>>,
    options: &TraceOptions,
) -> Result<RunTrace> {
    let mut traj = Trajectory::seeded(env, cfg.seed);
    run(&mut traj, a, cfg, w_star, options)
}
