//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use localtd::algorithms::{run_local_td, run_single_agent_td, run_vanilla, Recording, Replay, Trajectory};
use localtd::experiments::{gen_synthetic, run_trials, NamedRun, NavEnv, NavigationSpec, SyntheticInstance, SyntheticSpec};
use localtd::fixedpoint::{lemma1_bound, lyapunov_constants};
use localtd::metrics::{q_norm, Metric};
use localtd::rng::{rng_for_stream, INSTANCE_STREAM};
use localtd::topology::{build_graph, consensus_matrix, step_size_condition, ConsensusScheme, GraphKind};
use localtd::{compute_fixed_point, InitSpec, RunConfig, TraceOptions};

const MASTER_SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn instance(seed: u64) -> SyntheticInstance {
    gen_synthetic(&SyntheticSpec::default(), &mut rng_for_stream(seed, INSTANCE_STREAM)).unwrap()
}

/// `max_j |(d^T P)_j - d_j|`, computed directly.
fn stationary_residual(p: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    (0..p.ncols())
        .map(|j| ((0..p.nrows()).map(|i| d[i] * p[(i, j)]).sum::<f64>() - d[j]).abs())
        .fold(0.0, f64::max)
}

fn fixed_point_exactness() -> Outcome {
    let start = Instant::now();
    let (mut worst_fp, mut worst_ss) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let inst = instance(seed);
        let fp = compute_fixed_point(&inst.problem).unwrap();
        let r = &fp.psi * &fp.w_star + &fp.b;
        worst_fp = worst_fp.max(r.amax());
        worst_ss = worst_ss.max(stationary_residual(&fp.chain.transition, &fp.d));
    }
    let t = start.elapsed().as_secs_f64();
    outcome(
        worst_fp < 1e-10 && worst_ss < 1e-12 && t < 1.0,
        format!("max |Psi w* + b| = {worst_fp:.2e}, max |d^T P - d^T| = {worst_ss:.2e}, {t:.3} s"),
    )
}

fn k1_reduction() -> Outcome {
    let inst = instance(MASTER_SEED);
    let fp = compute_fixed_point(&inst.problem).unwrap();
    let opts = TraceOptions {
        record_params: true,
        ..TraceOptions::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let local = run_local_td(
            &mut Trajectory::seeded(&inst.problem, seed),
            &inst.consensus,
            &RunConfig::local_td(0.1, 1, 2000, seed),
            Some(&fp.w_star),
            &opts,
        )
        .unwrap();
        let vanilla = run_vanilla(
            &mut Trajectory::seeded(&inst.problem, seed),
            &inst.consensus,
            &RunConfig::vanilla(0.1, 2000, seed),
            Some(&fp.w_star),
            &opts,
        )
        .unwrap();
        assert_eq!(local.rounds.len(), vanilla.rounds.len());
        for (a, b) in local.rounds.iter().zip(&vanilla.rounds) {
            let dp = (a.params.as_ref().unwrap() - b.params.as_ref().unwrap()).amax();
            let dm = [
                (a.objective_error.unwrap() - b.objective_error.unwrap()).abs(),
                (a.msbe.unwrap_or(0.0) - b.msbe.unwrap_or(0.0)).abs(),
                (a.consensus_error - b.consensus_error).abs(),
                (a.q_norm - b.q_norm).abs(),
                (a.mu_bar - b.mu_bar).abs(),
            ];
            worst = dm.iter().fold(worst.max(dp), |m, &x| m.max(x));
        }
        for (x, y) in local.final_mu.iter().zip(&vanilla.final_mu) {
            worst = worst.max((x - y).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max per-entry difference over 5 seeds = {worst:.2e}"))
}

fn average_dynamics() -> Outcome {
    let start = Instant::now();
    let inst = instance(MASTER_SEED);
    let opts = TraceOptions {
        record_mean_path: true,
        ..TraceOptions::default()
    };
    let mut worst = 0.0f64;
    for (label, init) in [
        ("zero", InitSpec::Zero),
        (
            "random",
            InitSpec::Uniform {
                w_half_width: 1.0,
                mu_half_width: 2.0,
            },
        ),
    ] {
        let cfg = RunConfig::local_td(0.005, 50, 200, 31).with_init(init);
        let mut rec = Recording::new(Trajectory::seeded(&inst.problem, 31));
        let team = run_local_td(&mut rec, &inst.consensus, &cfg, None, &opts).unwrap();
        let w0 = team.initial_params.column_mean();
        let mu0 = team.initial_mu.iter().sum::<f64>() / team.initial_mu.len() as f64;
        let single_cfg = RunConfig::single_agent(0.005, 50, 200, 0).with_init(InitSpec::Constant {
            w: w0.iter().copied().collect(),
            mu: mu0,
        });
        let single = run_single_agent_td(&mut Replay::team_average(&rec.samples), &single_cfg, None, &opts).unwrap();
        assert_eq!(team.mean_path.len(), 10_000, "{label}");
        for ((wt, mt), (ws, ms)) in team.mean_path.iter().zip(&single.mean_path) {
            worst = worst.max((wt - ws).amax()).max((mt - ms).abs());
        }
    }
    let t = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-9 && t < 5.0,
        format!("max |(w_bar, mu_bar) - single-agent| over 10^4 steps, zero and random init = {worst:.2e}, {t:.2} s"),
    )
}

fn consensus_bound_pathwise() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec {
        num_agents: 3,
        ..SyntheticSpec::default()
    };
    let (beta, k, rounds) = (0.005, 4, 200);
    let mut checked = 0usize;
    let mut min_slack = f64::INFINITY;
    let mut all_ok = true;
    for seed in 0..10u64 {
        let inst = gen_synthetic(&spec, &mut rng_for_stream(seed, INSTANCE_STREAM)).unwrap();
        let eta = inst.consensus.eta();
        let r_max = inst.problem.mdp.reward_bound();
        let cond = step_size_condition(beta, k, eta, 3).unwrap();
        if !cond.ok {
            return outcome(false, format!("step-size condition unexpectedly fails (threshold {})", cond.threshold));
        }
        let opts = TraceOptions {
            record_params: true,
            ..TraceOptions::default()
        };
        for init in [
            InitSpec::Zero,
            InitSpec::Uniform {
                w_half_width: 5.0,
                mu_half_width: 1.0,
            },
        ] {
            let cfg = RunConfig::local_td(beta, k, rounds, seed).with_init(init);
            let trace = run_local_td(&mut Trajectory::seeded(&inst.problem, seed), &inst.consensus, &cfg, None, &opts).unwrap();
            let q00 = q_norm(trace.rounds[0].params.as_ref().unwrap());
            for snap in &trace.rounds {
                let measured = q_norm(snap.params.as_ref().unwrap());
                let bound = lemma1_bound(3, eta, beta, k, snap.round, r_max, q00).unwrap();
                min_slack = min_slack.min(bound - measured);
                all_ok &= measured <= bound;
                checked += 1;
            }
        }
    }
    let t = start.elapsed().as_secs_f64();
    outcome(
        all_ok && t < 10.0,
        format!("{checked} (run, round) pairs, N = 3, beta K = {}, min slack = {min_slack:.3e}, {t:.2} s", beta * k as f64),
    )
}

fn psi_negative_definite() -> Outcome {
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20 {
        let fp = compute_fixed_point(&instance(seed).problem).unwrap();
        let sym = (&fp.psi + fp.psi.transpose()) * 0.5;
        worst = worst.max(sym.symmetric_eigenvalues().max());
    }
    let t = start.elapsed().as_secs_f64();
    outcome(worst < 0.0 && t < 1.0, format!("largest eigenvalue of (Psi + Psi^T)/2 over 20 instances = {worst:.3e}, {t:.3} s"))
}

/// Non-overlapping 10-round block means of rounds `1..=last`.
fn block_means(series: &[Option<f64>], last: usize) -> Vec<f64> {
    series[1..=last].chunks(10).map(|c| c.iter().map(|v| v.unwrap()).sum::<f64>() / c.len() as f64).collect()
}

fn first_increase(blocks: &[f64]) -> Option<usize> {
    blocks.windows(2).position(|w| w[1] > w[0])
}

fn fig3() -> Vec<Outcome> {
    let start = Instant::now();
    let inst = instance(MASTER_SEED);
    let fp = compute_fixed_point(&inst.problem).unwrap();
    let run = |r: NamedRun| run_trials(&inst.problem, &inst.consensus, Some(&fp.w_star), &r, 10, MASTER_SEED).unwrap();
    let local = run(NamedRun::new("local", RunConfig::local_td(0.005, 50, 200, 0)));
    let batch = run(NamedRun::new("batching", RunConfig::batching(0.1, 50, 200, 0)));
    let vanilla = run(NamedRun::new("vanilla", RunConfig::vanilla(0.1, 10_000, 0)));
    let t = start.elapsed().as_secs_f64();
    let at = |s: &localtd::experiments::TrialSummary, l| s.mean_at(Metric::ObjectiveError, l).unwrap();
    let (lo, ba, va) = (at(&local, 200), at(&batch, 200), at(&vanilla, 400));
    let ratio = lo.max(ba) / lo.min(ba);
    let mut out = vec![
        outcome(
            ratio <= 2.0 && t < 60.0,
            format!("local {lo:.4e} vs batching {ba:.4e} at round 200, ratio {ratio:.3}, {t:.1} s"),
        ),
        outcome(va > lo, format!("vanilla at round 400 = {va:.4e}, local at round 200 = {lo:.4e}")),
    ];
    let mut mono = true;
    let mut notes = Vec::new();
    for (name, s, last) in [("local", &local, 200), ("batching", &batch, 200), ("vanilla", &vanilla, 400)] {
        let blocks = block_means(&s.series(Metric::ObjectiveError), last);
        match first_increase(&blocks) {
            None => notes.push(format!("{name} monotone")),
            Some(b) => {
                mono = false;
                let peak = blocks.iter().cloned().enumerate().fold((0, f64::MIN), |m, (i, v)| if v > m.1 { (i, v) } else { m });
                let after_peak = first_increase(&blocks[peak.0..]).is_none();
                notes.push(format!(
                    "{name} rises after block {b} (initial {:.3e}, peak {:.3e} at block {}, monotone after peak: {after_peak})",
                    s.mean_at(Metric::ObjectiveError, 0).unwrap(),
                    peak.1,
                    peak.0
                ));
            }
        }
    }
    out.push(outcome(mono, notes.join("; ")));
    out
}

fn fig8() -> Outcome {
    let start = Instant::now();
    let inst = instance(MASTER_SEED);
    let fp = compute_fixed_point(&inst.problem).unwrap();
    let total = 50_000;
    let mut finals = Vec::new();
    for k in [40usize, 100, 200, 250] {
        let r = NamedRun::new(format!("K{k}"), RunConfig::local_td(0.005, k, total / k, 0));
        let s = run_trials(&inst.problem, &inst.consensus, Some(&fp.w_star), &r, 10, MASTER_SEED).unwrap();
        finals.push((k, s.final_row().unwrap().objective_error.unwrap()));
    }
    let t = start.elapsed().as_secs_f64();
    let ok = finals.windows(2).all(|w| w[1].1 >= w[0].1);
    let text: Vec<String> = finals.iter().map(|(k, e)| format!("K={k}: {e:.4e}")).collect();
    outcome(ok && t < 120.0, format!("beta 0.005, {total} samples each: {}, {t:.1} s", text.join(", ")))
}

fn lyapunov() -> Outcome {
    let start = Instant::now();
    let mut worst_res = 0.0f64;
    let mut worst_rel = 0.0f64;
    let mut pd = true;
    for seed in 0..20 {
        let inst = instance(seed);
        let fp = compute_fixed_point(&inst.problem).unwrap();
        let r_max = inst.problem.mdp.reward_bound();
        let lc = lyapunov_constants(&fp.psi, &inst.problem.features, &fp.d, r_max).unwrap();
        // rebuild the augmented matrix and check the solution directly
        let n = fp.psi.nrows();
        let phi = inst.problem.features.matrix();
        let mean_phi = phi.transpose() * &fp.d;
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m[(0, 0)] = -1.0;
        for a in 0..n {
            m[(a + 1, 0)] = -mean_phi[a];
            for b in 0..n {
                m[(a + 1, b + 1)] = fp.psi[(a, b)];
            }
        }
        let u = &lc.u;
        let res = (m.transpose() * u + u * &m + DMatrix::identity(n + 1, n + 1)).norm();
        worst_res = worst_res.max(res);
        let asym = (u - u.transpose()).amax();
        let eig = ((u + u.transpose()) * 0.5).symmetric_eigenvalues();
        let (lmax, lmin) = (eig.max(), eig.min());
        pd &= asym < 1e-10 && lmin > 0.0;
        let expected = [
            0.9 / lmax,
            2.25 * lmax / lmin,
            2.0 * lmax * lmax * (r_max * r_max + 55.0 * (1.0 + r_max).powi(3)) / (0.9 * lmin),
        ];
        for (got, want) in [lc.c1, lc.c2, lc.c3].iter().zip(expected) {
            worst_rel = worst_rel.max((got - want).abs() / want.abs());
        }
    }
    let t = start.elapsed().as_secs_f64();
    outcome(
        worst_res < 1e-8 && pd && worst_rel < 1e-10 && t < 1.0,
        format!("max residual {worst_res:.2e}, U symmetric positive definite: {pd}, max relative constant error {worst_rel:.2e}, {t:.3} s"),
    )
}

fn navigation() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_for_stream(MASTER_SEED, INSTANCE_STREAM);
    let env = NavEnv::new(NavigationSpec::default(), &mut rng).unwrap();
    let graph = build_graph(GraphKind::ErdosRenyi { p: 0.5 }, 9, &mut rng).unwrap();
    let a = consensus_matrix(&graph, ConsensusScheme::Metropolis).unwrap();
    let run = |r: NamedRun| run_trials(&env, &a, None, &r, 10, MASTER_SEED).unwrap();
    let summaries = [
        run(NamedRun::new("local", RunConfig::local_td(0.05, 20, 500, 0))),
        run(NamedRun::new("batching", RunConfig::batching(0.1, 20, 500, 0))),
        run(NamedRun::new("vanilla", RunConfig::vanilla(0.1, 10_000, 0))),
    ];
    let t = start.elapsed().as_secs_f64();
    let curves: Vec<Vec<f64>> = summaries
        .iter()
        .map(|s| s.series(Metric::Msbe).into_iter().skip(1).map(|v| v.unwrap()).collect())
        .collect();
    let decreasing = curves.iter().all(|c| c.last().unwrap() < c.first().unwrap());
    let target = 1.1 * curves[0].last().unwrap();
    let reach = |c: &[f64]| c.iter().position(|&v| v <= target).map(|i| i + 1);
    let (local_r, vanilla_r) = (reach(&curves[0]), reach(&curves[2]));
    let ok = decreasing
        && match (local_r, vanilla_r) {
            (Some(l), Some(v)) => 2 * l <= v,
            _ => false,
        }
        && t < 120.0;
    let ends: Vec<String> = summaries
        .iter()
        .zip(&curves)
        .map(|(s, c)| format!("{} {:.4e} -> {:.4e}", s.run.name, c[0], c.last().unwrap()))
        .collect();
    outcome(
        ok,
        format!(
            "{}; rounds to 1.1x local final MSBE: local {local_r:?}, vanilla {vanilla_r:?}; {t:.1} s",
            ends.join(", ")
        ),
    )
}

fn accounting() -> Outcome {
    let spec = SyntheticSpec {
        num_agents: 4,
        ..SyntheticSpec::default()
    };
    let inst = gen_synthetic(&spec, &mut rng_for_stream(1, INSTANCE_STREAM)).unwrap();
    let mut rows = 0usize;
    let mut ok = true;
    for (kind, period_param, rounds) in [(0, 1, 37), (0, 7, 13), (0, 50, 20), (1, 1, 101), (2, 1, 9), (2, 20, 11), (2, 64, 5)] {
        let cfg = match kind {
            0 => RunConfig::local_td(0.01, period_param, rounds, 3),
            1 => RunConfig::vanilla(0.01, rounds, 3),
            _ => RunConfig::batching(0.01, period_param, rounds, 3),
        };
        let mut rec = Recording::new(Trajectory::seeded(&inst.problem, 3));
        let trace = localtd::run(&mut rec, &inst.consensus, &cfg, None, &TraceOptions::default()).unwrap();
        ok &= rec.samples.len() == cfg.total_samples() && trace.total_samples() == rec.samples.len();
        for r in &trace.rounds {
            ok &= r.round * trace.period == r.samples;
            rows += 1;
        }
        let s = run_trials(&inst.problem, &inst.consensus, None, &NamedRun::new("x", cfg.clone()), 2, 5).unwrap();
        for r in s.all_rows() {
            ok &= r.comm_round * cfg.period() == r.samples;
            rows += 1;
        }
    }
    outcome(ok, format!("rounds x period == samples on {rows} rows across local, vanilla and batching"))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 fixed-point exactness", fixed_point_exactness()),
        ("2 K=1 reduction", k1_reduction()),
        ("3 average-dynamics equivalence", average_dynamics()),
        ("4 path-wise consensus bound", consensus_bound_pathwise()),
        ("5 Psi negative definite", psi_negative_definite()),
    ];
    let mut f3 = fig3().into_iter();
    results.push(("6a local vs batching at round 200", f3.next().unwrap()));
    results.push(("6b vanilla behind local", f3.next().unwrap()));
    results.push(("6c smoothed curves monotone", f3.next().unwrap()));
    results.push(("7 error floor grows with K", fig8()));
    results.push(("8 Lyapunov constants", lyapunov()));
    results.push(("9 navigation MSBE", navigation()));
    results.push(("10 sample accounting", accounting()));
    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
