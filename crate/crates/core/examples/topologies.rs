//! Builds each supported network on 9 agents and prints the properties that
//! matter for consensus: double stochasticity, the smallest positive weight
//! and the second singular value.

use localtd::rng::rng_from_seed;
use localtd::topology::{build_graph, consensus_matrix, ConsensusScheme, GraphKind};

fn main() -> localtd::Result<()> {
    let cases = [
        ("ring", GraphKind::Ring, ConsensusScheme::UniformAverage),
        (
            "ring 0.4/0.3",
            GraphKind::Ring,
            ConsensusScheme::FixedRing { d_self: 0.4, d_off: 0.3 },
        ),
        ("4-regular", GraphKind::KRegular { k: 4 }, ConsensusScheme::UniformAverage),
        ("6-regular", GraphKind::KRegular { k: 6 }, ConsensusScheme::UniformAverage),
        ("ER(0.5)", GraphKind::ErdosRenyi { p: 0.5 }, ConsensusScheme::Metropolis),
        ("ER(0.5) averaging", GraphKind::ErdosRenyi { p: 0.5 }, ConsensusScheme::UniformAverage),
        ("complete", GraphKind::Complete, ConsensusScheme::UniformAverage),
    ];
    println!("{:<20} {:>6} {:>10} {:>8} {:>8}", "network", "edges", "doubly", "eta", "sigma2");
    for (name, kind, scheme) in cases {
        let g = build_graph(kind, 9, &mut rng_from_seed(7))?;
        let a = consensus_matrix(&g, scheme)?;
        let rep = a.validate();
        println!(
            "{name:<20} {:>6} {:>10} {:>8.4} {:>8.4}",
            g.num_edges(),
            rep.is_doubly_stochastic,
            rep.eta,
            rep.second_singular_value
        );
    }
    Ok(())
}
