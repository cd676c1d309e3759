//! Repeated trials, aggregation and cross-algorithm comparison.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{run_on_env, AlgorithmKind, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricsRow, TraceOptions, TrialId};
use crate::model::Environment;
use crate::rng::trial_seed;
use crate::topology::ConsensusMatrix;

/// A labelled algorithm configuration. The run seed is replaced per trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedRun {
    pub name: String,
    pub config: RunConfig,
}

impl NamedRun {
    pub fn new(name: impl Into<String>, config: RunConfig) -> Self {
        Self {
            name: name.into(),
            config,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrialStatus {
    Completed(Vec<MetricsRow>),
    Diverged(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub trial: u32,
    pub seed: u64,
    pub status: TrialStatus,
}

impl TrialOutcome {
    pub fn rows(&self) -> Option<&[MetricsRow]> {
        match &self.status {
            TrialStatus::Completed(rows) => Some(rows),
            TrialStatus::Diverged(_) => None,
        }
    }
}

/// All trials of one configuration plus their per-round mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSummary {
    pub run: NamedRun,
    pub trials: Vec<TrialOutcome>,
    /// Mean over completed trials, one row per round. Empty when every trial
    /// diverged.
    pub mean: Vec<MetricsRow>,
}

impl TrialSummary {
    pub fn completed(&self) -> usize {
        self.trials.iter().filter(|t| t.rows().is_some()).count()
    }

    pub fn diverged(&self) -> Vec<u32> {
        self.trials.iter().filter(|t| t.rows().is_none()).map(|t| t.trial).collect()
    }

    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.mean.last()
    }

    /// Mean of `metric` at communication round `round`.
    pub fn mean_at(&self, metric: Metric, round: usize) -> Option<f64> {
        self.mean.iter().find(|r| r.comm_round == round).and_then(|r| r.get(metric))
    }

    pub fn series(&self, metric: Metric) -> Vec<Option<f64>> {
        self.mean.iter().map(|r| r.get(metric)).collect()
    }

    /// Per-trial rows followed by the mean rows.
    pub fn all_rows(&self) -> Vec<MetricsRow> {
        let mut rows: Vec<MetricsRow> = self.trials.iter().filter_map(|t| t.rows()).flatten().cloned().collect();
        rows.extend(self.mean.iter().cloned());
        rows
    }
}

/// Runs `trials` independent trajectories of one configuration in parallel.
/// Trial `t` uses seed `master_seed ^ t`. Diverged trials are kept in the
/// outcome list and left out of the mean.
pub fn run_trials<E: Environment>(
    env: &E,
    consensus: &ConsensusMatrix,
    w_star: Option<&DVector<f64>>,
    run: &NamedRun,
    trials: u32,
    master_seed: u64,
) -> Result<TrialSummary> {
    if trials == 0 {
        return Err(Error::config("at least one trial is required"));
    }
    run.config.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(master_seed, t as u64);
            let cfg = RunConfig { seed, ..run.config.clone() };
            let status = match run_on_env(env, consensus, &cfg, w_star, &TraceOptions::default()) {
                Ok(trace) => TrialStatus::Completed(trace.rounds.iter().map(|r| r.to_row(TrialId::Trial(t))).collect()),
                Err(e @ Error::Divergence { .. }) => TrialStatus::Diverged(e.to_string()),
                Err(e) => return Err(e),
            };
            Ok(TrialOutcome { trial: t, seed, status })
        })
        .collect::<Result<_>>()?;
    for o in &outcomes {
        if let TrialStatus::Diverged(msg) = &o.status {
            log::warn!("{}: trial {} excluded from the mean ({msg})", run.name, o.trial);
        }
    }
    let completed: Vec<&[MetricsRow]> = outcomes.iter().filter_map(|o| o.rows()).collect();
    Ok(TrialSummary {
        run: run.clone(),
        mean: mean_rows(&completed),
        trials: outcomes,
    })
}

/// Per-round mean over traces of equal length. A metric is present in the
/// mean only if every trace has it at that round.
pub fn mean_rows(traces: &[&[MetricsRow]]) -> Vec<MetricsRow> {
    let Some(first) = traces.first() else {
        return Vec::new();
    };
    let count = traces.len() as f64;
    let avg = |idx: usize, metric: Metric| -> Option<f64> {
        let mut sum = 0.0;
        for t in traces {
            sum += t[idx].get(metric)?;
        }
        Some(sum / count)
    };
    (0..first.len())
        .map(|idx| MetricsRow {
            trial: TrialId::Mean,
            comm_round: first[idx].comm_round,
            samples: first[idx].samples,
            objective_error: avg(idx, Metric::ObjectiveError),
            msbe: avg(idx, Metric::Msbe),
            consensus_error: avg(idx, Metric::ConsensusError),
            q_norm: avg(idx, Metric::QNorm),
        })
        .collect()
}

/// One line of the cross-configuration comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub kind: AlgorithmKind,
    pub beta: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub period: usize,
    pub comm_rounds: usize,
    pub samples: usize,
    pub completed: usize,
    pub diverged: usize,
    pub objective_error: Option<f64>,
    pub msbe: Option<f64>,
    pub consensus_error: Option<f64>,
    pub q_norm: Option<f64>,
}

pub fn comparison_table(summaries: &[TrialSummary]) -> Vec<ComparisonRow> {
    summaries
        .iter()
        .map(|s| {
            let c = &s.run.config;
            let last = s.final_row();
            ComparisonRow {
                name: s.run.name.clone(),
                kind: c.kind,
                beta: c.beta,
                local_steps: c.local_steps,
                batch_size: c.batch_size,
                period: c.period(),
                comm_rounds: last.map_or(0, |r| r.comm_round),
                samples: last.map_or(0, |r| r.samples),
                completed: s.completed(),
                diverged: s.diverged().len(),
                objective_error: last.and_then(|r| r.objective_error),
                msbe: last.and_then(|r| r.msbe),
                consensus_error: last.and_then(|r| r.consensus_error),
                q_norm: last.and_then(|r| r.q_norm),
            }
        })
        .collect()
}

/// Grid over local steps, batch sizes and round counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Step size for the local TD runs.
    pub beta: f64,
    /// Step size for the batching runs; defaults to `beta`.
    #[serde(default)]
    pub batch_beta: Option<f64>,
    #[serde(default)]
    pub local_steps: Vec<usize>,
    #[serde(default)]
    pub batch_sizes: Vec<usize>,
    pub rounds: Vec<usize>,
}

/// Expands a sweep into named runs: every `(K, L)` for local TD, then every
/// `(M, L)` for batching.
pub fn sweep_runs(spec: &SweepSpec) -> Result<Vec<NamedRun>> {
    if spec.rounds.is_empty() || (spec.local_steps.is_empty() && spec.batch_sizes.is_empty()) {
        return Err(Error::config("a sweep needs round counts and local steps or batch sizes"));
    }
    let mut runs = Vec::new();
    for &k in &spec.local_steps {
        for &l in &spec.rounds {
            runs.push(NamedRun::new(format!("local_K{k}_L{l}"), RunConfig::local_td(spec.beta, k, l, 0)));
        }
    }
    let batch_beta = spec.batch_beta.unwrap_or(spec.beta);
    for &m in &spec.batch_sizes {
        for &l in &spec.rounds {
            runs.push(NamedRun::new(format!("batch_M{m}_L{l}"), RunConfig::batching(batch_beta, m, l, 0)));
        }
    }
    for r in &runs {
        r.config.validate()?;
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::InitSpec;
    use crate::experiments::synthetic::{gen_synthetic, SyntheticSpec};
    use crate::fixedpoint::compute_fixed_point;
    use crate::rng::rng_from_seed;

    fn small() -> crate::experiments::synthetic::SyntheticInstance {
        let spec = SyntheticSpec {
            num_agents: 4,
            ..SyntheticSpec::default()
        };
        gen_synthetic(&spec, &mut rng_from_seed(1)).unwrap()
    }

    #[test]
    fn single_trial_mean_is_the_trace() {
        let inst = small();
        let fp = compute_fixed_point(&inst.problem).unwrap();
        let run = NamedRun::new("local", RunConfig::local_td(0.01, 5, 20, 0));
        let s = run_trials(&inst.problem, &inst.consensus, Some(&fp.w_star), &run, 1, 42).unwrap();
        let trial = s.trials[0].rows().unwrap();
        assert_eq!(trial.len(), s.mean.len());
        for (a, b) in trial.iter().zip(&s.mean) {
            assert_eq!(a.objective_error, b.objective_error);
            assert_eq!(a.msbe, b.msbe);
            assert_eq!(a.samples, b.samples);
        }
    }

    #[test]
    fn trials_are_deterministic_and_distinct() {
        let inst = small();
        let run = NamedRun::new("vanilla", RunConfig::vanilla(0.1, 50, 0));
        let a = run_trials(&inst.problem, &inst.consensus, None, &run, 3, 7).unwrap();
        let b = run_trials(&inst.problem, &inst.consensus, None, &run, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials[1].seed, 7 ^ 1);
        assert_ne!(a.trials[0].rows(), a.trials[1].rows());
        assert!(a.mean[0].objective_error.is_none());
    }

    #[test]
    fn diverged_trials_are_excluded() {
        let inst = small();
        let cfg = RunConfig::vanilla(1e200, 20, 0).with_init(InitSpec::Uniform {
            w_half_width: 1e200,
            mu_half_width: 0.0,
        });
        let s = run_trials(&inst.problem, &inst.consensus, None, &NamedRun::new("bad", cfg), 2, 0).unwrap();
        assert_eq!(s.diverged(), vec![0, 1]);
        assert!(s.mean.is_empty());
        let table = comparison_table(&[s]);
        assert_eq!(table[0].diverged, 2);
    }

    #[test]
    fn mean_of_rows() {
        let row = |t, v| MetricsRow {
            trial: TrialId::Trial(t),
            comm_round: 1,
            samples: 5,
            objective_error: Some(v),
            msbe: None,
            consensus_error: Some(2.0 * v),
            q_norm: Some(0.0),
        };
        let (a, b) = (vec![row(0, 1.0)], vec![row(1, 3.0)]);
        let m = mean_rows(&[&a, &b]);
        assert_eq!(m[0].objective_error, Some(2.0));
        assert_eq!(m[0].consensus_error, Some(4.0));
        assert_eq!(m[0].msbe, None);
        assert_eq!(m[0].trial, TrialId::Mean);
    }

    #[test]
    fn sweep_expansion() {
        let spec = SweepSpec {
            beta: 0.005,
            batch_beta: Some(0.1),
            local_steps: vec![10, 50],
            batch_sizes: vec![50],
            rounds: vec![100, 200],
        };
        let runs = sweep_runs(&spec).unwrap();
        assert_eq!(runs.len(), 6);
        assert_eq!(runs[5].name, "batch_M50_L200");
        assert_eq!(runs[5].config.beta, 0.1);
        assert_eq!(runs[0].config.total_samples(), 1000);
    }
}
