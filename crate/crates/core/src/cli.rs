//! The `localtd` command line.
//!
//! Exit codes: 0 success, 2 invalid input or violated assumption, 3 numerical
//! failure or divergence, 4 I/O failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::synthetic::SyntheticSpec;
use crate::experiments::trials::{comparison_table, sweep_runs, NamedRun, TrialSummary};
use crate::fixedpoint::{
    compute_fixed_point, lemma1_bound, symmetric_part_max_eigenvalue, theoretical_constants, TheoreticalConstants,
    DEFAULT_MIXING_HORIZON,
};
use crate::io::config::{validate_instance, Check, ExperimentConfig, InstanceFile, ModelSection};
use crate::io::csv::{format_comparison, read_csv, write_csv, write_text};
use crate::io::plot::{plotted_rows, render_plot, AxesSpec, Series, XAxis};
use crate::metrics::Metric;
use crate::topology::{step_size_condition, StepSizeCheck};

#[derive(Parser, Debug)]
#[command(name = "localtd", version, about = "Decentralized average-reward TD with local update steps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic instance as JSON.
    Gen(GenArgs),
    /// Run every algorithm section of a config over all trials.
    Run(RunArgs),
    /// Print the stationary distribution, average reward and TD fixed point.
    FixedPoint(SourceArgs),
    /// Evaluate the consensus-error bound and the convergence constants.
    Bound(BoundArgs),
    /// Run the (K, M, L) grid of a config's sweep section.
    Sweep(RunArgs),
    /// Render metrics CSV files as an SVG line plot.
    Plot(PlotArgs),
    /// Check an instance against the modelling assumptions.
    Validate(SourceArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Take the synthetic model section and master seed from this config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Write here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config and the environment variable.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// Instance JSON written by `gen`.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    instance: Option<PathBuf>,
    /// Experiment config with a synthetic or file model.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    beta: f64,
    #[arg(long = "local-steps")]
    local_steps: usize,
    #[arg(long)]
    rounds: usize,
    /// Spectral norm of the initial consensus deviation.
    #[arg(long, default_value_t = 0.0)]
    q0: f64,
    #[arg(long, default_value_t = DEFAULT_MIXING_HORIZON)]
    horizon: usize,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Metrics CSV files, one line per file.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    #[arg(long, default_value = "comm_round", value_parser = parse_x)]
    x: XAxis,
    #[arg(long, value_parser = parse_metric)]
    y: Metric,
    #[arg(long)]
    log_y: bool,
    #[arg(long, default_value_t = 1e-12)]
    floor: f64,
    /// Legend labels in file order; defaults to the file stems.
    #[arg(long)]
    label: Vec<String>,
    #[arg(long)]
    title: Option<String>,
    #[arg(short, long)]
    output: PathBuf,
}

fn parse_x(s: &str) -> std::result::Result<XAxis, String> {
    match s {
        "comm_round" => Ok(XAxis::CommRound),
        "samples" => Ok(XAxis::Samples),
        _ => Err(format!("expected comm_round or samples, got {s:?}")),
    }
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric {s:?}"))
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::FixedPoint(a) => fixed_point(a),
        Command::Bound(a) => bound(a),
        Command::Sweep(a) => sweep(a),
        Command::Plot(a) => plot(a),
        Command::Validate(a) => validate(a),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn gen(a: GenArgs) -> Result<()> {
    let (mut spec, seed) = match &a.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            match cfg.model {
                ModelSection::Synthetic(mut s) => {
                    if let Some(t) = cfg.topology {
                        s.graph = t.graph;
                        s.consensus = t.consensus;
                    }
                    (s, cfg.master_seed)
                }
                _ => return Err(Error::config("gen needs a synthetic model section")),
            }
        }
        None => (SyntheticSpec::default(), a.seed),
    };
    if let Some(n) = a.agents {
        spec.num_agents = n;
    }
    if let Some(s) = a.states {
        spec.num_states = s;
    }
    if let Some(d) = a.dim {
        spec.feature_dim = d;
    }
    let json = InstanceFile::generate(&spec, seed)?.to_json();
    match a.output {
        Some(p) => write_text(&p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn write_summaries(dir: &Path, summaries: &[TrialSummary], table_name: &str) -> Result<()> {
    for s in summaries {
        write_csv(&s.all_rows(), &dir.join(format!("{}.csv", s.run.name)))?;
    }
    let table = format_comparison(&comparison_table(summaries));
    write_text(&dir.join(table_name), &table)?;
    print!("{table}");
    if let Some(s) = summaries.iter().find(|s| s.completed() == 0) {
        let first = s.trials.first().map(|t| format!("{:?}", t.status)).unwrap_or_default();
        return Err(Error::Numerical(format!("every trial of {:?} diverged: {first}", s.run.name)));
    }
    Ok(())
}

fn run_all(a: &RunArgs, runs: impl Fn(&ExperimentConfig) -> Result<Vec<NamedRun>>, table: &str) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let runs = runs(&cfg)?;
    let exp = cfg.build()?;
    let dir = a.output_dir.clone().unwrap_or_else(|| cfg.output_dir());
    let summaries = runs
        .iter()
        .map(|r| {
            log::info!("running {} ({} trials)", r.name, cfg.trials);
            exp.run(r, cfg.trials, cfg.master_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    write_summaries(&dir, &summaries, table)
}

fn run(a: RunArgs) -> Result<()> {
    run_all(
        &a,
        |cfg| {
            if cfg.algorithms.is_empty() {
                return Err(Error::config("config has no [[algorithm]] sections"));
            }
            Ok(cfg.algorithms.iter().map(|s| s.to_run()).collect())
        },
        "comparison.csv",
    )
}

fn sweep(a: RunArgs) -> Result<()> {
    run_all(
        &a,
        |cfg| match &cfg.sweep {
            Some(s) => sweep_runs(s),
            None => Err(Error::config("config has no [sweep] section")),
        },
        "sweep.csv",
    )
}

fn load_instance(src: &SourceArgs) -> Result<InstanceFile> {
    if let Some(p) = &src.instance {
        return InstanceFile::load(p);
    }
    let path = src.config.as_ref().ok_or_else(|| Error::config("pass --instance or --config"))?;
    let cfg = ExperimentConfig::load(path)?;
    let mut file = match &cfg.model {
        ModelSection::Synthetic(spec) => {
            let mut spec = spec.clone();
            if let Some(t) = cfg.topology {
                spec.graph = t.graph;
                spec.consensus = t.consensus;
            }
            return InstanceFile::generate(&spec, cfg.master_seed);
        }
        ModelSection::File { path } => InstanceFile::load(&cfg.base_dir.join(path))?,
        ModelSection::Navigation(_) => {
            return Err(Error::config("tabular analysis is not available for the navigation model"))
        }
    };
    if let Some(t) = cfg.topology {
        let mut rng = crate::rng::rng_for_stream(cfg.master_seed, crate::rng::INSTANCE_STREAM);
        let agents = file.problem.mdp.num_agents();
        file.graph = Some(crate::topology::build_graph(t.graph, agents, &mut rng)?);
        file.consensus = t.consensus;
    }
    Ok(file)
}

#[derive(Serialize)]
struct FixedPointReport {
    stationary_distribution: Vec<f64>,
    average_reward: f64,
    w_star: Vec<f64>,
    psi: Vec<Vec<f64>>,
    b: Vec<f64>,
    fixed_point_residual: f64,
    stationary_residual: f64,
    psi_symmetric_max_eigenvalue: f64,
}

fn fixed_point(a: SourceArgs) -> Result<()> {
    let file = load_instance(&a)?;
    let fp = compute_fixed_point(&file.problem)?;
    print_json(&FixedPointReport {
        stationary_distribution: fp.d.iter().copied().collect(),
        average_reward: fp.j_pi,
        w_star: fp.w_star.iter().copied().collect(),
        psi: fp.psi.row_iter().map(|r| r.iter().copied().collect()).collect(),
        b: fp.b.iter().copied().collect(),
        fixed_point_residual: fp.residual(),
        stationary_residual: fp.steady_state_residual(),
        psi_symmetric_max_eigenvalue: symmetric_part_max_eigenvalue(&fp.psi),
    });
    Ok(())
}

#[derive(Serialize)]
struct BoundReport {
    num_agents: usize,
    eta: f64,
    beta: f64,
    local_steps: usize,
    rounds: usize,
    q0: f64,
    step_size: StepSizeCheck,
    bound: f64,
    constants: TheoreticalConstants,
}

fn bound(a: BoundArgs) -> Result<()> {
    let file = load_instance(&a.source)?;
    let (_, consensus) = file.network()?;
    let n = file.problem.mdp.num_agents();
    let r_max = file.problem.mdp.reward_bound();
    let eta = consensus.eta();
    let step_size = step_size_condition(a.beta, a.local_steps, eta, n)?;
    let bound = lemma1_bound(n, eta, a.beta, a.local_steps, a.rounds, r_max, a.q0)?;
    let fp = compute_fixed_point(&file.problem)?;
    let constants =
        theoretical_constants(&fp, &file.problem.features, n, eta, a.beta, a.local_steps, r_max, a.horizon)?;
    print_json(&BoundReport {
        num_agents: n,
        eta,
        beta: a.beta,
        local_steps: a.local_steps,
        rounds: a.rounds,
        q0: a.q0,
        step_size,
        bound,
        constants,
    });
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let mut data = Vec::with_capacity(a.csv.len());
    for p in &a.csv {
        data.push(plotted_rows(&read_csv(p)?));
    }
    if !a.label.is_empty() && a.label.len() != a.csv.len() {
        return Err(Error::config(format!("{} labels for {} files", a.label.len(), a.csv.len())));
    }
    let series: Vec<Series<'_>> = data
        .iter()
        .enumerate()
        .map(|(i, rows)| Series {
            label: a.label.get(i).cloned().unwrap_or_else(|| {
                a.csv[i].file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            }),
            rows,
        })
        .collect();
    let axes = AxesSpec {
        x: a.x,
        y: a.y,
        log_y: a.log_y,
        floor: a.floor,
        title: a.title.clone(),
    };
    write_text(&a.output, &render_plot(&series, &axes)?)
}

#[derive(Serialize)]
struct ValidationReport {
    ok: bool,
    checks: Vec<Check>,
}

fn validate(a: SourceArgs) -> Result<()> {
    let file = load_instance(&a)?;
    let checks = validate_instance(&file);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.ok).map(|c| c.name).collect();
    let ok = failed.is_empty();
    print_json(&ValidationReport { ok, checks: checks.clone() });
    if ok {
        Ok(())
    } else {
        Err(Error::Assumption {
            assumption: "instance validation",
            detail: format!("failed checks: {}", failed.join(", ")),
        })
    }
}
