//! Local TD, batching and vanilla TD on the 20-agent synthetic problem, ten
//! trials each, with the objective error after every 50 communication rounds.

use localtd::experiments::{comparison_table, gen_synthetic, run_trials, NamedRun, SyntheticSpec};
use localtd::io::csv::format_comparison;
use localtd::rng::{rng_for_stream, INSTANCE_STREAM};
use localtd::{compute_fixed_point, Metric, RunConfig};

fn main() -> localtd::Result<()> {
    let seed = 2024;
    let inst = gen_synthetic(&SyntheticSpec::default(), &mut rng_for_stream(seed, INSTANCE_STREAM))?;
    let fp = compute_fixed_point(&inst.problem)?;
    let runs = [
        NamedRun::new("local", RunConfig::local_td(0.005, 50, 200, 0)),
        NamedRun::new("batch", RunConfig::batching(0.1, 50, 200, 0)),
        NamedRun::new("vanilla", RunConfig::vanilla(0.1, 10_000, 0)),
    ];
    let mut summaries = Vec::new();
    for run in &runs {
        summaries.push(run_trials(&inst.problem, &inst.consensus, Some(&fp.w_star), run, 10, seed)?);
    }

    println!("{:>6} {:>12} {:>12} {:>12}", "round", "local", "batch", "vanilla");
    for l in (0..=400).step_by(50) {
        let cell = |i: usize| {
            summaries[i]
                .mean_at(Metric::ObjectiveError, l)
                .map_or("-".to_string(), |v| format!("{v:.4e}"))
        };
        println!("{l:>6} {:>12} {:>12} {:>12}", cell(0), cell(1), cell(2));
    }
    println!();
    print!("{}", format_comparison(&comparison_table(&summaries)));
    Ok(())
}
