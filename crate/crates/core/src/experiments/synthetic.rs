//! Randomly generated tabular instances: state-only dynamics, heterogeneous
//! per-agent rewards and unit-norm random features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_features, Dynamics, FeatureMap, JointPolicy, MultiAgentMdp, TabularProblem};
use crate::rng::SimRng;
use crate::topology::{build_graph, consensus_matrix, ConsensusMatrix, ConsensusScheme, Graph, GraphKind};

/// Feature draws before giving up on a full-rank, constant-free map.
pub const MAX_FEATURE_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_agents: usize,
    pub num_states: usize,
    pub feature_dim: usize,
    pub actions_per_agent: usize,
    pub reward_low: f64,
    pub reward_high: f64,
    pub noise_half_width: f64,
    pub graph: GraphKind,
    pub consensus: ConsensusScheme,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_agents: 20,
            num_states: 10,
            feature_dim: 5,
            actions_per_agent: 2,
            reward_low: 0.0,
            reward_high: 4.0,
            noise_half_width: 0.5,
            graph: GraphKind::Ring,
            consensus: ConsensusScheme::FixedRing {
                d_self: 0.4,
                d_off: 0.3,
            },
        }
    }
}

impl SyntheticSpec {
    pub fn reward_bound(&self) -> f64 {
        self.reward_low.abs().max(self.reward_high.abs()) + self.noise_half_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 || self.num_states == 0 || self.feature_dim == 0 || self.actions_per_agent == 0 {
            return Err(Error::config("synthetic sizes must be positive"));
        }
        if self.feature_dim > self.num_states {
            return Err(Error::config(format!(
                "feature dimension {} exceeds the number of states {}",
                self.feature_dim, self.num_states
            )));
        }
        if !(self.reward_low <= self.reward_high) || !(self.noise_half_width >= 0.0) {
            return Err(Error::config("reward range must be ordered and noise non-negative"));
        }
        Ok(())
    }
}

/// A generated instance with its communication network.
#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub problem: TabularProblem,
    /// `None` for a single agent, which needs no network.
    pub graph: Option<Graph>,
    pub consensus: ConsensusMatrix,
}

/// Draws an instance. The generator is consumed in a fixed order:
/// transition rows, reward tables, features (with retries), then the graph.
pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut SimRng) -> Result<SyntheticInstance> {
    spec.validate()?;
    let (n_agents, s) = (spec.num_agents, spec.num_states);
    let mut transition = Vec::with_capacity(s * s);
    for _ in 0..s {
        let mut row: Vec<f64> = (0..s).map(|_| rng.random::<f64>()).collect();
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return Err(Error::Generation("degenerate transition row".into()));
        }
        row.iter_mut().for_each(|p| *p /= total);
        transition.extend(row);
    }
    let rewards: Vec<f64> = (0..n_agents * s)
        .map(|_| {
            if spec.reward_high > spec.reward_low {
                rng.random_range(spec.reward_low..spec.reward_high)
            } else {
                spec.reward_low
            }
        })
        .collect();
    let actions = vec![spec.actions_per_agent; n_agents];
    let mdp = MultiAgentMdp::new(
        n_agents,
        s,
        actions.clone(),
        Dynamics::Factored { transition, rewards },
        spec.noise_half_width,
        spec.reward_bound(),
    )?;
    let features = gen_features(s, spec.feature_dim, rng)?;
    let policy = JointPolicy::uniform(s, actions);
    let problem = TabularProblem::new(mdp, policy, features)?;
    let (graph, consensus) = if n_agents == 1 {
        (None, ConsensusMatrix::new(nalgebra::DMatrix::identity(1, 1))?)
    } else {
        let g = build_graph(spec.graph, n_agents, rng)?;
        let a = consensus_matrix(&g, spec.consensus)?;
        (Some(g), a)
    };
    Ok(SyntheticInstance {
        problem,
        graph,
        consensus,
    })
}

/// Uniform `[0, 1]` entries, rows scaled to unit length, redrawn until the
/// map has full column rank and cannot represent the constant vector.
pub fn gen_features(num_states: usize, dim: usize, rng: &mut SimRng) -> Result<FeatureMap> {
    for _ in 0..MAX_FEATURE_ATTEMPTS {
        let mut values = Vec::with_capacity(num_states * dim);
        for _ in 0..num_states {
            let mut row: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                row[0] = 1.0;
            } else {
                row.iter_mut().for_each(|x| *x /= norm);
            }
            values.extend(row);
        }
        let fm = FeatureMap::new(num_states, dim, values)?;
        if validate_features(&fm).is_ok() {
            return Ok(fm);
        }
    }
    Err(Error::Generation(format!(
        "no valid {num_states}x{dim} feature map after {MAX_FEATURE_ATTEMPTS} draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::induced_chain;
    use crate::rng::rng_from_seed;

    #[test]
    fn default_instance_shape() {
        let inst = gen_synthetic(&SyntheticSpec::default(), &mut rng_from_seed(0)).unwrap();
        assert_eq!(inst.problem.mdp.num_agents(), 20);
        assert_eq!(inst.problem.features.dim(), 5);
        assert!((inst.consensus.eta() - 0.3).abs() < 1e-12);
        assert!(validate_features(&inst.problem.features).is_ok());
        let chain = induced_chain(&inst.problem.mdp, &inst.problem.policy).unwrap();
        for row in chain.transition.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        for s in 0..10 {
            let norm: f64 = inst.problem.features.phi(s).iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert!((inst.problem.mdp.reward_bound() - 4.5).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_synthetic(&SyntheticSpec::default(), &mut rng_from_seed(3)).unwrap();
        let b = gen_synthetic(&SyntheticSpec::default(), &mut rng_from_seed(3)).unwrap();
        assert_eq!(a.problem, b.problem);
        assert_eq!(a.consensus, b.consensus);
    }

    #[test]
    fn infeasible_features_are_rejected() {
        let spec = SyntheticSpec {
            num_states: 3,
            feature_dim: 4,
            ..SyntheticSpec::default()
        };
        assert!(gen_synthetic(&spec, &mut rng_from_seed(0)).is_err());
        // dim == |S| with positive entries always spans the constant vector
        assert!(matches!(
            gen_features(3, 3, &mut rng_from_seed(0)),
            Err(Error::Generation(_))
        ));
    }
}
