//! Experimental settings and the multi-trial harness.

pub mod navigation;
pub mod synthetic;
pub mod trials;

pub use navigation::{Move, NavEnv, NavState, NavigationSpec};
pub use synthetic::{gen_features, gen_synthetic, SyntheticInstance, SyntheticSpec};
pub use trials::{comparison_table, mean_rows, run_trials, sweep_runs, ComparisonRow, NamedRun, SweepSpec, TrialOutcome, TrialStatus, TrialSummary};
