//! Compares the measured consensus deviation ||Q|| against the path-wise
//! bound on a small ring where the step-size condition can be met.

use localtd::algorithms::{run_local_td, Trajectory};
use localtd::experiments::{gen_synthetic, SyntheticSpec};
use localtd::fixedpoint::{consensus_bound_constants, lemma1_bound};
use localtd::metrics::q_norm;
use localtd::rng::{rng_for_stream, INSTANCE_STREAM};
use localtd::topology::step_size_condition;
use localtd::{InitSpec, RunConfig, TraceOptions};

fn main() -> localtd::Result<()> {
    let spec = SyntheticSpec {
        num_agents: 3,
        ..SyntheticSpec::default()
    };
    let inst = gen_synthetic(&spec, &mut rng_for_stream(4, INSTANCE_STREAM))?;
    let (n, eta, r_max) = (3, inst.consensus.eta(), spec.reward_bound());
    let (beta, k) = (0.005, 4);

    let check = step_size_condition(beta, k, eta, n)?;
    let c = consensus_bound_constants(n, eta, beta, k, r_max)?;
    println!(
        "beta K = {} <= {:.4}: {}   rho = {:.4}, kappa1 = {:?}, kappa2 = {:.1}",
        beta * k as f64,
        check.threshold,
        check.ok,
        c.rho,
        c.kappa1,
        c.kappa2
    );

    let cfg = RunConfig::local_td(beta, k, 100, 1).with_init(InitSpec::Uniform {
        w_half_width: 10.0,
        mu_half_width: 1.0,
    });
    let opts = TraceOptions {
        record_params: true,
        ..TraceOptions::default()
    };
    let trace = run_local_td(&mut Trajectory::seeded(&inst.problem, 1), &inst.consensus, &cfg, None, &opts)?;
    let q00 = q_norm(trace.rounds[0].params.as_ref().unwrap());
    println!("{:>6} {:>12} {:>12}", "round", "||Q||", "bound");
    for snap in trace.rounds.iter().step_by(10) {
        let q = q_norm(snap.params.as_ref().unwrap());
        let bound = lemma1_bound(n, eta, beta, k, snap.round, r_max, q00)?;
        println!("{:>6} {q:>12.4e} {bound:>12.4e}", snap.round);
    }
    Ok(())
}
