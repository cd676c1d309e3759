//! Exact steady-state quantities of the policy-induced chain and the
//! constants that appear in the finite-time error bounds.
//!
//! Everything here is computed by dense linear algebra on the tabular model;
//! no sampling is involved.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{induced_chain, FeatureMap, InducedChain, TabularProblem};
use crate::topology::step_size_condition;

/// Default horizon for the mixing-time search.
pub const DEFAULT_MIXING_HORIZON: usize = 100_000;

const ASSUMPTION_ERGODIC: &str = "irreducible and aperiodic induced chain";

/// Returns an error unless `p` is primitive (some power is entrywise
/// positive). Uses the Wielandt bound `(n-1)^2 + 1` and repeated squaring of
/// the sparsity pattern; positivity persists for every larger power once
/// reached.
pub fn check_ergodic(p: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    if n != p.ncols() {
        return Err(Error::config("transition matrix must be square"));
    }
    if n == 1 {
        return Ok(());
    }
    let mut pattern: Vec<bool> = (0..n * n).map(|i| p[(i / n, i % n)] > 0.0).collect();
    let wielandt = (n - 1) * (n - 1) + 1;
    let mut power = 1usize;
    while power < wielandt {
        let mut next = vec![false; n * n];
        for i in 0..n {
            for k in 0..n {
                if pattern[i * n + k] {
                    for j in 0..n {
                        next[i * n + j] |= pattern[k * n + j];
                    }
                }
            }
        }
        pattern = next;
        power *= 2;
    }
    if pattern.iter().all(|&x| x) {
        Ok(())
    } else {
        Err(Error::Assumption {
            assumption: ASSUMPTION_ERGODIC,
            detail: "the policy-induced chain is reducible or periodic".into(),
        })
    }
}

/// Stationary distribution `d` with `d^T P = d^T`, `sum d = 1`.
pub fn steady_state(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_ergodic(p)?;
    let n = p.nrows();
    let mut system = p.transpose() - DMatrix::identity(n, n);
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = system.clone().lu();
    let mut d = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular steady-state system".into()))?;
    // one step of iterative refinement
    let r = &rhs - &system * &d;
    if let Some(corr) = lu.solve(&r) {
        d += corr;
    }
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Assumption {
            assumption: ASSUMPTION_ERGODIC,
            detail: "steady state has non-positive entries".into(),
        });
    }
    Ok(d)
}

/// `max_s |(d^T P - d^T)_s|`.
pub fn steady_state_residual(p: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    (p.transpose() * d - d).amax()
}

/// `J = sum_s d(s) rbar(s)`, with `rbar` already averaged over actions and agents.
pub fn average_reward(d: &DVector<f64>, mean_reward: &DVector<f64>) -> f64 {
    d.dot(mean_reward)
}

/// `Psi = E_d[phi(s) (phi(s') - phi(s))^T]` and `b = E_d[phi(s) (rbar(s) - J)]`.
///
/// This is the orientation of the mean TD increment `E[delta phi] = Psi w + b`,
/// so `w* = -Psi^{-1} b` is the point the learners converge to. The transposed
/// product has the same symmetric part but a different solution.
pub fn compute_psi_b(
    chain: &InducedChain,
    features: &FeatureMap,
    d: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let phi = features.matrix();
    let j = average_reward(d, &chain.mean_reward);
    // row x of `drift` is E[phi(s') | s = x] - phi(x)
    let drift = &chain.transition * &phi - &phi;
    let n = features.dim();
    let mut psi = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for s in 0..features.num_states() {
        let phi_s = phi.row(s).transpose();
        let g = drift.row(s).transpose();
        psi += d[s] * &phi_s * g.transpose();
        b += d[s] * (chain.mean_reward[s] - j) * &phi_s;
    }
    (psi, b)
}

/// `w* = -Psi^{-1} b`.
pub fn solve_fixed_point(psi: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if !psi.is_square() || psi.nrows() != b.len() {
        return Err(Error::config("Psi must be square and match b"));
    }
    let smallest = psi
        .clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(smallest > 1e-12) {
        return Err(Error::Numerical(format!(
            "Psi is numerically singular (smallest singular value {smallest:e})"
        )));
    }
    let lu = psi.clone().lu();
    let rhs = -b;
    let mut w = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Psi is singular".into()))?;
    let r = &rhs - psi * &w;
    if let Some(corr) = lu.solve(&r) {
        w += corr;
    }
    Ok(w)
}

/// Largest eigenvalue of `(Psi + Psi^T) / 2`.
pub fn symmetric_part_max_eigenvalue(psi: &DMatrix<f64>) -> f64 {
    let sym = (psi + psi.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Exact stationary quantities of a tabular problem.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub d: DVector<f64>,
    pub j_pi: f64,
    pub psi: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w_star: DVector<f64>,
    pub chain: InducedChain,
}

impl FixedPoint {
    /// `max |Psi w* + b|`.
    pub fn residual(&self) -> f64 {
        (&self.psi * &self.w_star + &self.b).amax()
    }

    pub fn steady_state_residual(&self) -> f64 {
        steady_state_residual(&self.chain.transition, &self.d)
    }
}

pub fn compute_fixed_point(problem: &TabularProblem) -> Result<FixedPoint> {
    let chain = induced_chain(&problem.mdp, &problem.policy)?;
    let d = steady_state(&chain.transition)?;
    let j_pi = average_reward(&d, &chain.mean_reward);
    let (psi, b) = compute_psi_b(&chain, &problem.features, &d);
    let w_star = solve_fixed_point(&psi, &b)?;
    Ok(FixedPoint {
        d,
        j_pi,
        psi,
        b,
        w_star,
        chain,
    })
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingTime {
    pub tau: usize,
    /// The horizon was reached before the bound could be certified.
    pub capped: bool,
}

/// Smallest `tau` such that for every `k >= tau` and every start state `s`,
/// `|| Psi - E[(phi(s_{k+1}) - phi(s_k)) phi(s_k)^T | s_0 = s] || <= beta`
/// (spectral norm).
///
/// Powers of `P` are scanned until the total-variation certificate
/// `max_s ||P^k(s, .) - d||_1 * max_x ||G(x)|| <= beta` holds; past that
/// point the condition holds for all larger `k` because the TV distance to
/// stationarity never increases.
pub fn mixing_time(
    p: &DMatrix<f64>,
    features: &FeatureMap,
    beta: f64,
    horizon: usize,
) -> Result<MixingTime> {
    if !(beta > 0.0) {
        return Err(Error::config("mixing time needs beta > 0"));
    }
    let d = steady_state(p)?;
    let phi = features.matrix();
    let drift = p * &phi - &phi;
    let s = p.nrows();
    let psi = (0..s).fold(DMatrix::zeros(phi.ncols(), phi.ncols()), |acc, x| {
        acc + d[x] * drift.row(x).transpose() * phi.row(x)
    });
    let g_max = (0..s)
        .map(|x| drift.row(x).norm() * phi.row(x).norm())
        .fold(0.0, f64::max);

    let mut pk = DMatrix::<f64>::identity(s, s);
    let mut last_violation: Option<usize> = None;
    for k in 0..=horizon {
        for start in 0..s {
            let weights = pk.row(start);
            // E[G(s_k)] = drift^T diag(P^k(start, .)) phi
            let mut scaled = drift.clone();
            for x in 0..s {
                scaled.row_mut(x).scale_mut(weights[x]);
            }
            let expectation = scaled.transpose() * &phi;
            if spectral_norm(&(&psi - expectation)) > beta {
                last_violation = Some(k);
                break;
            }
        }
        let tv = (0..s)
            .map(|start| (0..s).map(|x| (pk[(start, x)] - d[x]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if tv * g_max <= beta {
            return Ok(MixingTime {
                tau: last_violation.map_or(0, |v| v + 1),
                capped: false,
            });
        }
        pk = &pk * p;
    }
    Ok(MixingTime {
        tau: horizon,
        capped: true,
    })
}

/// Constants of the consensus-error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConsensusBoundConstants {
    /// `None` when `eta^(N-1) = 1` (single agent or exact averaging), where the
    /// initial-error term vanishes after one round.
    pub kappa1: Option<f64>,
    pub kappa2: f64,
    pub rho: f64,
}

pub fn consensus_bound_constants(
    num_agents: usize,
    eta: f64,
    beta: f64,
    k: usize,
    r_max: f64,
) -> Result<ConsensusBoundConstants> {
    let check = step_size_condition(beta, k, eta, num_agents)?;
    let nf = num_agents as f64;
    let e = eta.powi(num_agents as i32 - 1);
    let inv = 1.0 + 1.0 / e;
    let kappa1 = if 1.0 - e > 0.0 {
        Some(2.0 * nf * nf * inv / (1.0 - e))
    } else {
        None
    };
    let kappa2 = 8.0 * inv * nf.powf(2.5) * r_max;
    Ok(ConsensusBoundConstants {
        kappa1,
        kappa2,
        rho: check.rho,
    })
}

/// `kappa1 rho^L ||Q_{0,0}|| + kappa2 beta K / (1 - rho)`.
///
/// Refuses when the step-size condition fails, since the bound does not apply.
pub fn lemma1_bound(
    num_agents: usize,
    eta: f64,
    beta: f64,
    k: usize,
    rounds: usize,
    r_max: f64,
    q00_norm: f64,
) -> Result<f64> {
    let check = step_size_condition(beta, k, eta, num_agents)?;
    if !check.ok {
        return Err(Error::Assumption {
            assumption: "step-size condition beta*K <= min{1/2, eta^(N-1)/(4(1-eta^(N-1)))}",
            detail: format!(
                "beta*K = {} exceeds {} (rho = {})",
                beta * k as f64,
                check.threshold,
                check.rho
            ),
        });
    }
    let c = consensus_bound_constants(num_agents, eta, beta, k, r_max)?;
    let transient = match c.kappa1 {
        Some(k1) => k1 * c.rho.powi(rounds as i32) * q00_norm,
        None if rounds == 0 => q00_norm,
        None => 0.0,
    };
    Ok(transient + c.kappa2 * beta * k as f64 / (1.0 - c.rho))
}

/// Solves `M^T U + U M + I = 0` through the Kronecker-vectorized system.
pub fn solve_lyapunov(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if !m.is_square() {
        return Err(Error::config("Lyapunov solver needs a square matrix"));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mt = m.transpose();
    let system = eye.kronecker(&mt) + mt.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, (0..n * n).map(|i| if i % (n + 1) == 0 { -1.0 } else { 0.0 }));
    let vec_u = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Lyapunov system is singular".into()))?;
    let u = DMatrix::from_column_slice(n, n, vec_u.as_slice());
    Ok((&u + u.transpose()) * 0.5)
}

pub fn lyapunov_residual(m: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    spectral_norm(&(m.transpose() * u + u * m + DMatrix::identity(n, n)))
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    m.clone().complex_eigenvalues().iter().all(|z| z.re < 0.0)
}

/// `[[-1, 0], [-Phi^T D 1, Psi]]`.
pub fn augmented_psi(psi: &DMatrix<f64>, features: &FeatureMap, d: &DVector<f64>) -> DMatrix<f64> {
    let n = psi.nrows();
    let phi = features.matrix();
    let weighted_mean = phi.transpose() * d;
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m[(0, 0)] = -1.0;
    for a in 0..n {
        m[(a + 1, 0)] = -weighted_mean[a];
    }
    m.view_mut((1, 1), (n, n)).copy_from(psi);
    m
}

/// Lyapunov solution and the derived convergence constants of the averaged
/// parameter.
#[derive(Clone, Debug, Serialize)]
pub struct LyapunovConstants {
    #[serde(skip)]
    pub u: DMatrix<f64>,
    pub residual: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

pub fn constants_from_eigenvalues(lambda_max: f64, lambda_min: f64, r_max: f64) -> (f64, f64, f64) {
    let c1 = 0.9 / lambda_max;
    let c2 = 2.25 * lambda_max / lambda_min;
    let c3 = 2.0 * lambda_max * lambda_max * (r_max * r_max + 55.0 * (1.0 + r_max).powi(3)) / (0.9 * lambda_min);
    (c1, c2, c3)
}

/// Constants for an already assembled augmented matrix.
pub fn lyapunov_constants_for(m: &DMatrix<f64>, r_max: f64) -> Result<LyapunovConstants> {
    if !is_hurwitz(m) {
        return Err(Error::Assumption {
            assumption: "Hurwitz augmented TD matrix",
            detail: "an eigenvalue has non-negative real part".into(),
        });
    }
    let u = solve_lyapunov(m)?;
    let eig = u.clone().symmetric_eigenvalues();
    let lambda_max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lambda_min > 0.0) {
        return Err(Error::Numerical(format!(
            "Lyapunov solution is not positive definite (lambda_min = {lambda_min:e})"
        )));
    }
    let (c1, c2, c3) = constants_from_eigenvalues(lambda_max, lambda_min, r_max);
    Ok(LyapunovConstants {
        residual: lyapunov_residual(m, &u),
        u,
        lambda_max,
        lambda_min,
        c1,
        c2,
        c3,
    })
}

pub fn lyapunov_constants(
    psi: &DMatrix<f64>,
    features: &FeatureMap,
    d: &DVector<f64>,
    r_max: f64,
) -> Result<LyapunovConstants> {
    lyapunov_constants_for(&augmented_psi(psi, features, d), r_max)
}

/// Every constant entering the error decomposition for one configuration.
#[derive(Clone, Debug, Serialize)]
pub struct TheoreticalConstants {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub kappa1: Option<f64>,
    pub kappa2: f64,
    pub rho: f64,
    pub step_size_ok: bool,
    pub tau_beta: MixingTime,
}

#[allow(clippy::too_many_arguments)]
pub fn theoretical_constants(
    fp: &FixedPoint,
    features: &FeatureMap,
    num_agents: usize,
    eta: f64,
    beta: f64,
    k: usize,
    r_max: f64,
    horizon: usize,
) -> Result<TheoreticalConstants> {
    let lyap = lyapunov_constants(&fp.psi, features, &fp.d, r_max)?;
    let consensus = consensus_bound_constants(num_agents, eta, beta, k, r_max)?;
    let step = step_size_condition(beta, k, eta, num_agents)?;
    let tau_beta = mixing_time(&fp.chain.transition, features, beta, horizon)?;
    Ok(TheoreticalConstants {
        lambda_max: lyap.lambda_max,
        lambda_min: lyap.lambda_min,
        c1: lyap.c1,
        c2: lyap.c2,
        c3: lyap.c3,
        kappa1: consensus.kappa1,
        kappa2: consensus.kappa2,
        rho: consensus.rho,
        step_size_ok: step.ok,
        tau_beta,
    })
}
