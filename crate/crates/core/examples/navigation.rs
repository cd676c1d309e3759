//! Cooperative navigation with 9 agents: MSBE of the three strategies after
//! selected communication rounds.

use localtd::experiments::{run_trials, NamedRun, NavEnv, NavigationSpec};
use localtd::rng::{rng_for_stream, INSTANCE_STREAM};
use localtd::topology::{build_graph, consensus_matrix, ConsensusScheme, GraphKind};
use localtd::{Metric, RunConfig};

fn main() -> localtd::Result<()> {
    let seed = 2024;
    let mut rng = rng_for_stream(seed, INSTANCE_STREAM);
    let env = NavEnv::new(NavigationSpec::default(), &mut rng)?;
    let graph = build_graph(GraphKind::ErdosRenyi { p: 0.5 }, 9, &mut rng)?;
    let a = consensus_matrix(&graph, ConsensusScheme::Metropolis)?;
    println!("landmarks: {:?}", env.landmarks());

    let runs = [
        NamedRun::new("local", RunConfig::local_td(0.05, 20, 500, 0)),
        NamedRun::new("batch", RunConfig::batching(0.1, 20, 500, 0)),
        NamedRun::new("vanilla", RunConfig::vanilla(0.1, 10_000, 0)),
    ];
    let mut summaries = Vec::new();
    for run in &runs {
        summaries.push(run_trials(&env, &a, None, run, 10, seed)?);
    }
    println!("{:>6} {:>12} {:>12} {:>12}", "round", "local", "batch", "vanilla");
    for l in [1, 10, 50, 100, 250, 500, 1000, 5000, 10_000] {
        let cell = |i: usize| {
            summaries[i]
                .mean_at(Metric::Msbe, l)
                .map_or("-".to_string(), |v| format!("{v:.4e}"))
        };
        println!("{l:>6} {:>12} {:>12} {:>12}", cell(0), cell(1), cell(2));
    }
    Ok(())
}
