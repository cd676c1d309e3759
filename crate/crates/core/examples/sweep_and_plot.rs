//! Sweeps K and L, writes one CSV per configuration plus the comparison
//! table, and renders the objective error against samples as an SVG.
//!
//! Output goes to `target/sweep_example` unless a directory is given as the
//! first argument.

use std::path::PathBuf;

use localtd::experiments::{comparison_table, gen_synthetic, run_trials, sweep_runs, SweepSpec, SyntheticSpec};
use localtd::io::csv::{format_comparison, write_csv};
use localtd::io::plot::{plotted_rows, render_plot, AxesSpec, Series, XAxis};
use localtd::rng::{rng_for_stream, INSTANCE_STREAM};
use localtd::{compute_fixed_point, Metric};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/sweep_example"));
    let seed = 7;
    let inst = gen_synthetic(&SyntheticSpec::default(), &mut rng_for_stream(seed, INSTANCE_STREAM))?;
    let fp = compute_fixed_point(&inst.problem)?;
    let spec = SweepSpec {
        beta: 0.005,
        batch_beta: Some(0.1),
        local_steps: vec![10, 50],
        batch_sizes: vec![50],
        rounds: vec![100],
    };

    let mut summaries = Vec::new();
    for run in sweep_runs(&spec)? {
        let s = run_trials(&inst.problem, &inst.consensus, Some(&fp.w_star), &run, 5, seed)?;
        write_csv(&s.all_rows(), &out.join(format!("{}.csv", run.name)))?;
        summaries.push(s);
    }
    let table = format_comparison(&comparison_table(&summaries));
    std::fs::write(out.join("sweep.csv"), &table)?;
    print!("{table}");

    let rows: Vec<_> = summaries.iter().map(|s| plotted_rows(&s.all_rows())).collect();
    let series: Vec<Series> = summaries
        .iter()
        .zip(&rows)
        .map(|(s, r)| Series {
            label: s.run.name.clone(),
            rows: r,
        })
        .collect();
    let mut axes = AxesSpec::new(XAxis::Samples, Metric::ObjectiveError);
    axes.log_y = true;
    axes.title = Some("objective error".into());
    let svg = render_plot(&series, &axes)?;
    let path = out.join("objective_error.svg");
    std::fs::write(&path, svg)?;
    println!("wrote {}", path.display());
    Ok(())
}
