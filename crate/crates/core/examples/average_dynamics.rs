//! The team average of local TD moves exactly like one centralized learner
//! fed the team-mean rewards. Runs both on one recorded trajectory and prints
//! the largest gap.

use localtd::algorithms::{run_local_td, run_single_agent_td, Recording, Replay, Trajectory};
use localtd::experiments::{gen_synthetic, SyntheticSpec};
use localtd::rng::{rng_for_stream, INSTANCE_STREAM};
use localtd::{InitSpec, RunConfig, TraceOptions};

fn main() -> localtd::Result<()> {
    let inst = gen_synthetic(&SyntheticSpec::default(), &mut rng_for_stream(2024, INSTANCE_STREAM))?;
    let opts = TraceOptions {
        record_mean_path: true,
        ..TraceOptions::default()
    };
    let cfg = RunConfig::local_td(0.005, 50, 200, 9).with_init(InitSpec::Uniform {
        w_half_width: 1.0,
        mu_half_width: 1.0,
    });
    let mut rec = Recording::new(Trajectory::seeded(&inst.problem, 9));
    let team = run_local_td(&mut rec, &inst.consensus, &cfg, None, &opts)?;

    let w0 = team.initial_params.column_mean();
    let mu0 = team.initial_mu.iter().sum::<f64>() / team.initial_mu.len() as f64;
    let single_cfg = RunConfig::single_agent(0.005, 50, 200, 0).with_init(InitSpec::Constant {
        w: w0.iter().copied().collect(),
        mu: mu0,
    });
    let single = run_single_agent_td(&mut Replay::team_average(&rec.samples), &single_cfg, None, &opts)?;

    let gap = team
        .mean_path
        .iter()
        .zip(&single.mean_path)
        .map(|((wt, mt), (ws, ms))| (wt - ws).amax().max((mt - ms).abs()))
        .fold(0.0, f64::max);
    println!("steps compared: {}", team.mean_path.len());
    println!("largest gap:    {gap:.3e}");
    Ok(())
}
