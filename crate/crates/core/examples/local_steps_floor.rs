//! Final objective error against the number of local steps K when every run
//! consumes the same number of samples.

use localtd::experiments::{gen_synthetic, run_trials, NamedRun, SyntheticSpec};
use localtd::rng::{rng_for_stream, INSTANCE_STREAM};
use localtd::{compute_fixed_point, RunConfig};

fn main() -> localtd::Result<()> {
    let seed = 2024;
    let budget = 50_000;
    let inst = gen_synthetic(&SyntheticSpec::default(), &mut rng_for_stream(seed, INSTANCE_STREAM))?;
    let fp = compute_fixed_point(&inst.problem)?;
    println!("{:>5} {:>6} {:>14}", "K", "L", "final error");
    for k in [10, 40, 100, 200, 250, 500] {
        let run = NamedRun::new(format!("K{k}"), RunConfig::local_td(0.005, k, budget / k, 0));
        let s = run_trials(&inst.problem, &inst.consensus, Some(&fp.w_star), &run, 10, seed)?;
        let err = s.final_row().and_then(|r| r.objective_error).unwrap_or(f64::NAN);
        println!("{k:>5} {:>6} {err:>14.4e}", budget / k);
    }
    Ok(())
}
