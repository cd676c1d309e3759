//! Evaluation metrics and the per-round recorder used by the runners.
//!
//! Parameter sets are `n x N` matrices whose column `i` is agent `i`'s `w`.
//! The Bellman-error metrics use the team-average reward and tracker. Those
//! are an evaluator privilege: nothing computed here feeds back into an
//! algorithm step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sqrt(sum_i ||w^i - w*||^2) / (n N)`.
pub fn objective_error(params: &DMatrix<f64>, w_star: &DVector<f64>) -> f64 {
    let (n, agents) = params.shape();
    let sq: f64 = params
        .column_iter()
        .map(|w| (w - w_star).norm_squared())
        .sum();
    sq.sqrt() / (n * agents) as f64
}

/// Objective error for environments that may lack a fixed point.
pub fn try_objective_error(params: &DMatrix<f64>, w_star: Option<&DVector<f64>>) -> Result<f64> {
    w_star
        .map(|w| objective_error(params, w))
        .ok_or(Error::UnsupportedMetric("objective_error"))
}

/// Empirical squared Bellman error of one sample:
/// `(1/N) sum_i (phi(s)^T w^i + mu_bar - r_bar - phi(s')^T w^i)^2`.
pub fn sbe(params: &DMatrix<f64>, phi: &[f64], phi_next: &[f64], r_bar: f64, mu_bar: f64) -> f64 {
    let agents = params.ncols();
    let total: f64 = params
        .column_iter()
        .map(|w| {
            let v: f64 = w
                .iter()
                .zip(phi.iter().zip(phi_next))
                .map(|(wi, (a, b))| wi * (a - b))
                .sum();
            let e = v + mu_bar - r_bar;
            e * e
        })
        .sum();
    total / agents as f64
}

/// Running mean of squared Bellman errors.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Msbe {
    count: u64,
    mean: f64,
}

impl Msbe {
    pub fn push(&mut self, sbe: f64) -> f64 {
        self.count += 1;
        self.mean += (sbe - self.mean) / self.count as f64;
        self.mean
    }

    pub fn value(&self) -> Option<f64> {
        (self.count > 0).then_some(self.mean)
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

fn deviations(params: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = params.column_mean();
    let mut q = params.clone();
    for mut c in q.column_iter_mut() {
        c -= &mean;
    }
    q
}

/// `(1/N) sum_i ||w^i - w_bar||^2`.
pub fn consensus_error(params: &DMatrix<f64>) -> f64 {
    deviations(params).norm_squared() / params.ncols() as f64
}

/// Spectral norm of `Q = [w^1 - w_bar, ..., w^N - w_bar]`.
pub fn q_norm(params: &DMatrix<f64>) -> f64 {
    let q = deviations(params);
    // ||Q||^2 is the top eigenvalue of the small Gram matrix Q Q^T
    let gram = &q * q.transpose();
    gram.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .max(0.0)
        .sqrt()
}

/// Metric names accepted in configs and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ObjectiveError,
    Msbe,
    ConsensusError,
    QNorm,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::ObjectiveError,
        Metric::Msbe,
        Metric::ConsensusError,
        Metric::QNorm,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Metric::ObjectiveError => "objective_error",
            Metric::Msbe => "msbe",
            Metric::ConsensusError => "consensus_error",
            Metric::QNorm => "q_norm",
        }
    }

    pub fn parse(name: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.column() == name)
    }
}

/// Identifies a row as belonging to one trial or to the across-trial mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrialId {
    Trial(u32),
    Mean,
}

impl std::fmt::Display for TrialId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrialId::Trial(t) => write!(f, "{t}"),
            TrialId::Mean => f.write_str("mean"),
        }
    }
}

/// One CSV row. Missing metrics (not selected or not defined for the
/// environment) are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub trial: TrialId,
    pub comm_round: usize,
    pub samples: usize,
    pub objective_error: Option<f64>,
    pub msbe: Option<f64>,
    pub consensus_error: Option<f64>,
    pub q_norm: Option<f64>,
}

impl MetricsRow {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::ObjectiveError => self.objective_error,
            Metric::Msbe => self.msbe,
            Metric::ConsensusError => self.consensus_error,
            Metric::QNorm => self.q_norm,
        }
    }
}

/// What the recorder keeps besides per-round metrics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceOptions {
    /// Copy of every agent's parameters at each round boundary.
    pub record_params: bool,
    /// `(w_bar, mu_bar)` after every local step.
    pub record_mean_path: bool,
    /// Keep each sample's squared Bellman error.
    pub record_sbe: bool,
}

/// Metrics at a communication-round boundary (after consensus).
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSnapshot {
    pub round: usize,
    pub samples: usize,
    pub objective_error: Option<f64>,
    pub msbe: Option<f64>,
    pub consensus_error: f64,
    pub q_norm: f64,
    pub mu_bar: f64,
    pub params: Option<DMatrix<f64>>,
}

impl RoundSnapshot {
    pub fn to_row(&self, trial: TrialId) -> MetricsRow {
        MetricsRow {
            trial,
            comm_round: self.round,
            samples: self.samples,
            objective_error: self.objective_error,
            msbe: self.msbe,
            consensus_error: Some(self.consensus_error),
            q_norm: Some(self.q_norm),
        }
    }
}

/// Collects metrics while a run progresses.
#[derive(Clone, Debug)]
pub struct Recorder {
    w_star: Option<DVector<f64>>,
    options: TraceOptions,
    msbe: Msbe,
    pub(crate) rounds: Vec<RoundSnapshot>,
    pub(crate) mean_path: Vec<(DVector<f64>, f64)>,
    pub(crate) sbe: Vec<f64>,
}

impl Recorder {
    pub fn new(w_star: Option<DVector<f64>>, options: TraceOptions) -> Self {
        Self {
            w_star,
            options,
            msbe: Msbe::default(),
            rounds: Vec::new(),
            mean_path: Vec::new(),
            sbe: Vec::new(),
        }
    }

    /// Called once per consumed sample with the parameters the sample is
    /// evaluated against.
    pub fn on_sample(&mut self, params: &DMatrix<f64>, mu: &[f64], phi: &[f64], phi_next: &[f64], rewards: &[f64]) {
        let r_bar = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let mu_bar = mu.iter().sum::<f64>() / mu.len() as f64;
        let e = sbe(params, phi, phi_next, r_bar, mu_bar);
        self.msbe.push(e);
        if self.options.record_sbe {
            self.sbe.push(e);
        }
    }

    pub fn on_step(&mut self, params: &DMatrix<f64>, mu: &[f64]) {
        if self.options.record_mean_path {
            self.mean_path.push((params.column_mean(), mu.iter().sum::<f64>() / mu.len() as f64));
        }
    }

    pub fn on_round(&mut self, round: usize, samples: usize, params: &DMatrix<f64>, mu: &[f64]) {
        self.rounds.push(RoundSnapshot {
            round,
            samples,
            objective_error: self.w_star.as_ref().map(|w| objective_error(params, w)),
            msbe: self.msbe.value(),
            consensus_error: consensus_error(params),
            q_norm: q_norm(params),
            mu_bar: mu.iter().sum::<f64>() / mu.len() as f64,
            params: self.options.record_params.then(|| params.clone()),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m(cols: &[&[f64]]) -> DMatrix<f64> {
        let n = cols[0].len();
        DMatrix::from_iterator(n, cols.len(), cols.iter().flat_map(|c| c.iter().copied()))
    }

    #[test]
    fn objective_error_examples() {
        let w_star = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(objective_error(&m(&[&[1.0, -2.0], &[1.0, -2.0]]), &w_star), 0.0);
        assert_eq!(objective_error(&m(&[&[4.0]]), &DVector::from_vec(vec![1.0])), 3.0);
        let e = objective_error(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), &DVector::zeros(2));
        assert_relative_eq!(e, 2f64.sqrt() / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn objective_error_needs_w_star() {
        let p = m(&[&[1.0]]);
        assert!(matches!(try_objective_error(&p, None), Err(Error::UnsupportedMetric(_))));
    }

    #[test]
    fn sbe_examples() {
        let zero = DMatrix::zeros(2, 3);
        assert_eq!(sbe(&zero, &[1.0, 0.0], &[0.0, 1.0], 0.7, 0.7), 0.0);
        let w = m(&[&[2.0, 3.0]]);
        assert_relative_eq!(sbe(&w, &[1.0, 0.0], &[0.0, 1.0], 1.0, 0.5), 2.25, epsilon = 1e-15);
        let same = m(&[&[2.0, 3.0], &[2.0, 3.0], &[2.0, 3.0]]);
        assert_relative_eq!(sbe(&same, &[1.0, 0.0], &[0.0, 1.0], 1.0, 0.5), 2.25, epsilon = 1e-15);
    }

    #[test]
    fn msbe_examples() {
        let mut a = Msbe::default();
        assert_eq!(a.value(), None);
        assert_eq!(a.push(3.5), 3.5);
        let mut c = Msbe::default();
        for _ in 0..10 {
            c.push(1.25);
        }
        assert_eq!(c.value(), Some(1.25));
        let mut s = Msbe::default();
        s.push(0.0);
        assert_eq!(s.push(2.0), 1.0);
    }

    #[test]
    fn consensus_error_examples() {
        assert_eq!(consensus_error(&m(&[&[1.0, 2.0], &[1.0, 2.0]])), 0.0);
        assert_relative_eq!(consensus_error(&m(&[&[1.0, 0.0], &[-1.0, 0.0]])), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn q_norm_matches_direct_svd() {
        // one agent offset by v, the other two balanced around the mean
        let p = m(&[&[3.0, 1.0, -1.0], &[-1.0, 0.0, 2.0], &[0.5, 0.5, 0.5], &[-0.5, -0.5, -0.5]]);
        let q = deviations(&p);
        let direct = q.clone().singular_values().iter().copied().fold(0.0, f64::max);
        assert_relative_eq!(q_norm(&p), direct, max_relative = 1e-12);
        assert_eq!(q_norm(&m(&[&[1.0, 2.0], &[1.0, 2.0]])), 0.0);
    }

    proptest! {
        #[test]
        fn norm_relations(values in proptest::collection::vec(-5.0f64..5.0, 12), shift in -3.0f64..3.0) {
            // n = 3 features, N = 4 agents
            let p = DMatrix::from_column_slice(3, 4, &values);
            let qn = q_norm(&p);
            let fro = deviations(&p).norm();
            prop_assert!(qn <= fro * (1.0 + 1e-12) + 1e-12);
            prop_assert!(fro <= 3f64.sqrt() * qn * (1.0 + 1e-12) + 1e-12);
            let ce = consensus_error(&p);
            prop_assert!((ce - fro * fro / 4.0).abs() <= 1e-10 * (1.0 + ce));
            let shifted = p.map(|x| x + shift);
            prop_assert!((consensus_error(&shifted) - ce).abs() <= 1e-9);
        }

        #[test]
        fn objective_error_is_permutation_invariant(values in proptest::collection::vec(-5.0f64..5.0, 8)) {
            let p = DMatrix::from_column_slice(2, 4, &values);
            let w_star = DVector::from_vec(vec![0.3, -0.1]);
            let mut swapped = p.clone();
            swapped.swap_columns(0, 3);
            swapped.swap_columns(1, 2);
            prop_assert!((objective_error(&p, &w_star) - objective_error(&swapped, &w_star)).abs() < 1e-14);
        }

        #[test]
        fn incremental_msbe_matches_batch_mean(xs in proptest::collection::vec(0.0f64..100.0, 1..200)) {
            let mut acc = Msbe::default();
            for &x in &xs {
                acc.push(x);
            }
            let batch = xs.iter().sum::<f64>() / xs.len() as f64;
            prop_assert!((acc.value().unwrap() - batch).abs() <= 1e-12 * batch.max(1.0));
        }
    }
}
