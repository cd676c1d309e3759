//! Stationary distribution, average reward and TD fixed point of a seeded
//! synthetic instance, plus the mixing time at a few step sizes.

use localtd::experiments::{gen_synthetic, SyntheticSpec};
use localtd::fixedpoint::{mixing_time, symmetric_part_max_eigenvalue, DEFAULT_MIXING_HORIZON};
use localtd::rng::{rng_for_stream, INSTANCE_STREAM};
use localtd::compute_fixed_point;

fn main() -> localtd::Result<()> {
    let inst = gen_synthetic(&SyntheticSpec::default(), &mut rng_for_stream(2024, INSTANCE_STREAM))?;
    let fp = compute_fixed_point(&inst.problem)?;

    println!("d      = {:.4?}", fp.d.as_slice());
    println!("J      = {:.6}", fp.j_pi);
    println!("w*     = {:.4?}", fp.w_star.as_slice());
    println!("|Psi w* + b|_inf       = {:.2e}", fp.residual());
    println!("|d^T P - d^T|_inf      = {:.2e}", fp.steady_state_residual());
    println!("max eig of sym(Psi)    = {:.4e}", symmetric_part_max_eigenvalue(&fp.psi));

    for beta in [0.1, 0.01, 0.001] {
        let tau = mixing_time(&fp.chain.transition, &inst.problem.features, beta, DEFAULT_MIXING_HORIZON)?;
        println!("tau({beta}) = {}{}", tau.tau, if tau.capped { " (capped)" } else { "" });
    }
    Ok(())
}
