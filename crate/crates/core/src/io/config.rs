//! Experiment configuration files and instance files.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmKind, InitSpec, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::navigation::{NavEnv, NavigationSpec};
use crate::experiments::synthetic::{gen_synthetic, SyntheticSpec};
use crate::experiments::trials::{run_trials, NamedRun, SweepSpec, TrialSummary};
use crate::fixedpoint::{check_ergodic, compute_fixed_point, FixedPoint};
use crate::metrics::{Metric, MetricsRow};
use crate::model::{validate_features, Environment, TabularProblem};
use crate::rng::{rng_for_stream, INSTANCE_STREAM};
use crate::topology::{build_graph, consensus_matrix, ConsensusMatrix, ConsensusScheme, Graph, GraphKind};

/// Overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "LOCALTD_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSection {
    Synthetic(SyntheticSpec),
    Navigation(NavigationSpec),
    /// A saved instance (see [`InstanceFile`]), relative to the config file.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub graph: GraphKind,
    #[serde(default)]
    pub consensus: ConsensusScheme,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub name: String,
    pub kind: AlgorithmKind,
    pub beta: f64,
    #[serde(default = "one")]
    pub local_steps: usize,
    pub rounds: usize,
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default)]
    pub init: InitSpec,
}

impl AlgorithmSection {
    pub fn to_run(&self) -> NamedRun {
        let local_steps = if self.kind == AlgorithmKind::Vanilla { 1 } else { self.local_steps };
        NamedRun::new(
            self.name.clone(),
            RunConfig {
                kind: self.kind,
                beta: self.beta,
                local_steps,
                rounds: self.rounds,
                batch_size: self.batch_size,
                seed: 0,
                init: self.init.clone(),
            },
        )
    }
}

fn default_trials() -> u32 {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u32,
    /// Every metric the model supports when absent.
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSection,
    /// Replaces the network of the model section when present.
    #[serde(default)]
    pub topology: Option<TopologySection>,
    #[serde(default, rename = "algorithm")]
    pub algorithms: Vec<AlgorithmSection>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Directory of the file this config came from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn selected_metrics(&self) -> Result<Vec<Metric>> {
        match &self.metrics {
            Some(names) => names
                .iter()
                .map(|m| Metric::parse(m).ok_or_else(|| Error::config(format!("unknown metric {m:?}"))))
                .collect(),
            None => Ok(Metric::ALL
                .iter()
                .copied()
                .filter(|m| !(matches!(self.model, ModelSection::Navigation(_)) && *m == Metric::ObjectiveError))
                .collect()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let metrics = self.selected_metrics()?;
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        let mut names = std::collections::BTreeSet::new();
        for a in &self.algorithms {
            if !names.insert(a.name.as_str()) {
                return Err(Error::config(format!("duplicate algorithm name {:?}", a.name)));
            }
            if a.name.is_empty() || a.name.contains(['/', '\\', ',']) {
                return Err(Error::config(format!("algorithm name {:?} is not a valid file stem", a.name)));
            }
            a.to_run().config.validate()?;
        }
        if let ModelSection::Navigation(_) = self.model {
            if metrics.contains(&Metric::ObjectiveError) {
                return Err(Error::UnsupportedMetric("objective_error"));
            }
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Generates or loads the model and its network.
    pub fn build(&self) -> Result<Experiment> {
        let mut rng = rng_for_stream(self.master_seed, INSTANCE_STREAM);
        let mut exp = match &self.model {
            ModelSection::Synthetic(spec) => {
                let mut spec = spec.clone();
                if let Some(t) = self.topology {
                    spec.graph = t.graph;
                    spec.consensus = t.consensus;
                }
                let inst = gen_synthetic(&spec, &mut rng)?;
                Experiment::tabular(inst.problem, inst.graph, inst.consensus)?
            }
            ModelSection::File { path } => {
                let file = InstanceFile::load(&self.base_dir.join(path))?;
                let (graph, consensus) = match self.topology {
                    Some(t) => network(t, file.problem.mdp.num_agents(), &mut rng)?,
                    None => file.network()?,
                };
                Experiment::tabular(file.problem, graph, consensus)?
            }
            ModelSection::Navigation(spec) => {
                let env = NavEnv::new(spec.clone(), &mut rng)?;
                let t = self.topology.unwrap_or(TopologySection {
                    graph: GraphKind::ErdosRenyi { p: 0.5 },
                    consensus: ConsensusScheme::Metropolis,
                });
                let (graph, consensus) = network(t, env.num_agents(), &mut rng)?;
                Experiment {
                    model: ExperimentModel::Navigation(env),
                    graph,
                    consensus,
                    metrics: Vec::new(),
                }
            }
        };
        exp.metrics = self.selected_metrics()?;
        Ok(exp)
    }
}

fn network(t: TopologySection, agents: usize, rng: &mut crate::rng::SimRng) -> Result<(Option<Graph>, ConsensusMatrix)> {
    if agents == 1 {
        return Ok((None, ConsensusMatrix::new(nalgebra::DMatrix::identity(1, 1))?));
    }
    let g = build_graph(t.graph, agents, rng)?;
    let a = consensus_matrix(&g, t.consensus)?;
    Ok((Some(g), a))
}

pub enum ExperimentModel {
    Tabular {
        problem: TabularProblem,
        fixed_point: Box<FixedPoint>,
    },
    Navigation(NavEnv),
}

/// A ready-to-run model with its network.
pub struct Experiment {
    pub model: ExperimentModel,
    pub graph: Option<Graph>,
    pub consensus: ConsensusMatrix,
    /// Metrics kept in the output; the rest are blanked.
    pub metrics: Vec<Metric>,
}

impl Experiment {
    pub fn tabular(problem: TabularProblem, graph: Option<Graph>, consensus: ConsensusMatrix) -> Result<Self> {
        if consensus.num_agents() != problem.mdp.num_agents() {
            return Err(Error::config("network size does not match the number of agents"));
        }
        let fixed_point = Box::new(compute_fixed_point(&problem)?);
        Ok(Self {
            model: ExperimentModel::Tabular { problem, fixed_point },
            graph,
            consensus,
            metrics: Metric::ALL.to_vec(),
        })
    }

    pub fn w_star(&self) -> Option<&DVector<f64>> {
        match &self.model {
            ExperimentModel::Tabular { fixed_point, .. } => Some(&fixed_point.w_star),
            ExperimentModel::Navigation(_) => None,
        }
    }

    pub fn run(&self, run: &NamedRun, trials: u32, master_seed: u64) -> Result<TrialSummary> {
        let mut summary = match &self.model {
            ExperimentModel::Tabular { problem, fixed_point } => {
                run_trials(problem, &self.consensus, Some(&fixed_point.w_star), run, trials, master_seed)?
            }
            ExperimentModel::Navigation(env) => run_trials(env, &self.consensus, None, run, trials, master_seed)?,
        };
        for t in &mut summary.trials {
            if let crate::experiments::TrialStatus::Completed(rows) = &mut t.status {
                rows.iter_mut().for_each(|r| self.mask(r));
            }
        }
        summary.mean.iter_mut().for_each(|r| self.mask(r));
        Ok(summary)
    }

    fn mask(&self, row: &mut MetricsRow) {
        for m in Metric::ALL {
            if !self.metrics.contains(&m) {
                match m {
                    Metric::ObjectiveError => row.objective_error = None,
                    Metric::Msbe => row.msbe = None,
                    Metric::ConsensusError => row.consensus_error = None,
                    Metric::QNorm => row.q_norm = None,
                }
            }
        }
    }
}

/// A self-contained tabular instance with its network, as written by `gen`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub seed: Option<u64>,
    pub problem: TabularProblem,
    /// Absent for a single agent.
    pub graph: Option<Graph>,
    pub consensus: ConsensusScheme,
}

impl InstanceFile {
    pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Self> {
        let inst = gen_synthetic(spec, &mut rng_for_stream(seed, INSTANCE_STREAM))?;
        Ok(Self {
            seed: Some(seed),
            problem: TabularProblem {
                mdp: inst.problem.mdp.with_seed(Some(seed)),
                ..inst.problem
            },
            graph: inst.graph,
            consensus: spec.consensus,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes") + "\n"
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn network(&self) -> Result<(Option<Graph>, ConsensusMatrix)> {
        let agents = self.problem.mdp.num_agents();
        match &self.graph {
            None if agents == 1 => Ok((None, ConsensusMatrix::new(nalgebra::DMatrix::identity(1, 1))?)),
            None => Err(Error::config("instance with several agents needs a graph")),
            Some(g) if g.num_nodes() != agents => Err(Error::config("graph size does not match the number of agents")),
            Some(g) => Ok((Some(g.clone()), consensus_matrix(g, self.consensus)?)),
        }
    }
}

/// Outcome of one assumption check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub ok: bool,
    pub detail: String,
}

/// Checks a tabular instance against the modelling assumptions: ergodic
/// induced chain, bounded rewards, doubly stochastic weights on a connected
/// network, and well-posed features.
pub fn validate_instance(file: &InstanceFile) -> Vec<Check> {
    let mut out = Vec::new();
    let chain = crate::model::induced_chain(&file.problem.mdp, &file.problem.policy);
    out.push(match chain.as_ref().map_err(|e| e.to_string()).and_then(|c| check_ergodic(&c.transition).map_err(|e| e.to_string())) {
        Ok(()) => Check {
            name: "ergodic_chain",
            ok: true,
            detail: "induced chain is irreducible and aperiodic".into(),
        },
        Err(e) => Check {
            name: "ergodic_chain",
            ok: false,
            detail: e,
        },
    });
    out.push(Check {
        name: "bounded_rewards",
        ok: true,
        detail: format!(
            "|r| + noise <= r_max = {} (enforced on load)",
            file.problem.mdp.reward_bound()
        ),
    });
    out.push(match file.network() {
        Ok((graph, a)) => {
            let report = a.validate();
            let connected = graph.as_ref().is_none_or(Graph::is_connected);
            let edges_ok = graph.as_ref().map_or(Ok(()), |g| a.check_assumption(g));
            let ok = report.is_doubly_stochastic && connected && edges_ok.is_ok();
            Check {
                name: "consensus_matrix",
                ok,
                detail: match edges_ok {
                    Err(e) => e.to_string(),
                    Ok(()) => format!(
                        "doubly stochastic: {}, connected: {connected}, eta = {}, second singular value = {}",
                        report.is_doubly_stochastic, report.eta, report.second_singular_value
                    ),
                },
            }
        }
        Err(e) => Check {
            name: "consensus_matrix",
            ok: false,
            detail: e.to_string(),
        },
    });
    let features = validate_features(&file.problem.features);
    out.push(Check {
        name: "features",
        ok: features.is_ok(),
        detail: if features.is_ok() {
            "full column rank, unit-bounded rows, constant not representable".into()
        } else {
            format!("{:?}", features.violations)
        },
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
master_seed = 5
trials = 2
output_dir = "out"

[model]
kind = "synthetic"
num_agents = 4

[[algorithm]]
name = "local"
kind = "local_td"
beta = 0.005
local_steps = 10
rounds = 5
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(BASIC, Path::new("cfg/x.toml")).unwrap();
        assert_eq!(cfg.base_dir, PathBuf::from("cfg"));
        assert_eq!(cfg.selected_metrics().unwrap().len(), 4);
        match &cfg.model {
            ModelSection::Synthetic(s) => {
                assert_eq!(s.num_agents, 4);
                assert_eq!(s.num_states, 10);
            }
            _ => panic!("wrong model"),
        }
        assert_eq!(cfg.algorithms[0].batch_size, 1);
        let exp = cfg.build().unwrap();
        assert!(exp.w_star().is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["bogus = 1\n", "[model]\nkind = \"synthetic\"\nnum_agentz = 3\n"] {
            let text = if extra.starts_with("[model]") {
                BASIC.replace("[model]\nkind = \"synthetic\"\nnum_agents = 4\n", extra)
            } else {
                format!("{extra}{BASIC}")
            };
            assert!(ExperimentConfig::from_toml(&text, Path::new("x.toml")).is_err(), "{text}");
        }
        let bad_alg = BASIC.replace("rounds = 5", "rounds = 5\nlocal_stepz = 3");
        assert!(ExperimentConfig::from_toml(&bad_alg, Path::new("x.toml")).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let t = BASIC.replace("beta = 0.005", "beta = -1.0");
        assert!(matches!(ExperimentConfig::from_toml(&t, Path::new("x")), Err(Error::Config(_))));
        let t = BASIC.replace("trials = 2", "trials = 2\nmetrics = [\"nope\"]");
        assert!(ExperimentConfig::from_toml(&t, Path::new("x")).is_err());
        let nav = BASIC.replace("kind = \"synthetic\"\nnum_agents = 4", "kind = \"navigation\"");
        let cfg = ExperimentConfig::from_toml(&nav, Path::new("x")).unwrap();
        assert!(!cfg.selected_metrics().unwrap().contains(&Metric::ObjectiveError));
        let nav = nav.replace("trials = 2", "trials = 2\nmetrics = [\"objective_error\", \"msbe\"]");
        assert!(matches!(ExperimentConfig::from_toml(&nav, Path::new("x")), Err(Error::UnsupportedMetric(_))));
    }

    #[test]
    fn instance_round_trip_and_validation() {
        let spec = SyntheticSpec {
            num_agents: 5,
            ..SyntheticSpec::default()
        };
        let file = InstanceFile::generate(&spec, 9).unwrap();
        let back = InstanceFile::from_json(&file.to_json(), Path::new("i.json")).unwrap();
        assert_eq!(file, back);
        assert!(validate_instance(&back).iter().all(|c| c.ok));
    }
}
