//! Stage II: drive the relaxed Boolean block to {0, 1}.
//!
//! The inner loop lets agents evaluate gradients at the current consensus
//! point while the coordinator solves a box-constrained QP carrying the
//! linearized complementarity penalty `α(1 − 2z_dᵏ)ᵀz_d`. Whenever the inner
//! loop settles with `γ = (1 − z_d)ᵀz_d ≥ ε_outer`, the coordinator scales
//! `α` by `β` and restarts the inner loop from the settled point.
//!
//! Two runtime audits ride along: the descent inequality
//! `Σgᵀ(z⁺ − z) ≤ α(γ − γ⁺) − (Nρ₂/2)‖z⁺ − z‖²` and monotone decrease of the
//! energy `E(z) = Σ f_i(z) + αγ(z)` within each inner loop.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::boxqp;
use crate::error::{Error, Result};
use crate::local_solver::regularize;
use crate::types::{check_in_box, gamma, AlgoParams, MixedVector, ProblemInstance, StageTag, TraceRecord};

pub const LEMMA1_TOL: f64 = 1e-9;
pub const ENERGY_TOL: f64 = 1e-10;
pub const QP_KKT_TOL: f64 = 1e-9;
const QP_MAX_ITER: usize = 500;

#[derive(Debug, Clone)]
pub struct Stage2Result {
    pub z_star: MixedVector,
    /// `z_star` with the discrete block snapped to {0, 1}.
    pub z_rounded: MixedVector,
    /// `Σ f_i(z_rounded)`.
    pub final_objective: f64,
    pub inner_iterations_total: usize,
    pub outer_bumps: usize,
    pub final_alpha: f64,
    pub trace: Vec<TraceRecord>,
    pub lemma1_violations: usize,
    pub energy_violations: usize,
    /// Whether `ρ₂ > L` held, so energy increases count as failures.
    pub energy_check_enforced: bool,
    /// γ at the end of every inner loop, in order.
    pub gamma_at_inner_exit: Vec<f64>,
    /// Inner loops that hit `max_iter_inner` before settling.
    pub capped_inner_loops: usize,
}

fn penalty_slope(z_k: &MixedVector, alpha: f64) -> impl Iterator<Item = f64> + '_ {
    z_k.disc().iter().map(move |&d| alpha * (1.0 - 2.0 * d))
}

/// Closed-form minimizer of
/// `(Nρ₂/2)‖z − zᵏ‖² + zᵀΣg + α(1 − 2z_dᵏ)ᵀz_d` over `0 ≤ z_d ≤ 1`.
///
/// The objective is separable with identical curvature in every coordinate,
/// so the minimizer is an unconstrained step followed by a clamp.
pub fn stage2_qp(
    z_k: &MixedVector,
    g_sum: &DVector<f64>,
    alpha: f64,
    rho2: f64,
    n_agents: usize,
) -> Result<MixedVector> {
    validate_qp_inputs(z_k, g_sum, rho2, n_agents)?;
    let curvature = n_agents as f64 * rho2;
    let n_c = z_k.n_c();
    let mut out = z_k.as_vector().clone();
    for j in 0..n_c {
        out[j] -= g_sum[j] / curvature;
    }
    for (k, slope) in penalty_slope(z_k, alpha).enumerate() {
        let j = n_c + k;
        out[j] = (out[j] - (g_sum[j] + slope) / curvature).clamp(0.0, 1.0);
    }
    Ok(z_k.with_data(out))
}

/// Same step with the exact (nonconvex) penalty `α(1 − z_d)ᵀz_d` in place of
/// its linearization. Numerically fragile once `2α ≥ Nρ₂`; experimental.
pub fn stage2_qp_exact_penalty(
    z_k: &MixedVector,
    g_sum: &DVector<f64>,
    alpha: f64,
    rho2: f64,
    n_agents: usize,
) -> Result<MixedVector> {
    validate_qp_inputs(z_k, g_sum, rho2, n_agents)?;
    let a = n_agents as f64 * rho2;
    let mut out = stage2_qp(z_k, g_sum, 0.0, rho2, n_agents)?.into_vector();
    for (k, &zk) in z_k.disc().iter().enumerate() {
        let j = z_k.n_c() + k;
        let phi = |t: f64| 0.5 * a * (t - zk).powi(2) + g_sum[j] * t + alpha * t * (1.0 - t);
        let curvature = a - 2.0 * alpha;
        out[j] = if curvature > 0.0 {
            ((a * zk - g_sum[j] - alpha) / curvature).clamp(0.0, 1.0)
        } else if phi(1.0) < phi(0.0) {
            1.0
        } else {
            0.0
        };
    }
    Ok(z_k.with_data(out))
}

/// Minimizer of
/// `Σ_i ½(z − zᵏ)ᵀ(H_i + ρ₂I)(z − zᵏ) + zᵀΣg + α(1 − 2z_dᵏ)ᵀz_d` over `0 ≤ z_d ≤ 1`,
/// found with the active-set box QP solver.
pub fn stage2_qp_accelerated(
    z_k: &MixedVector,
    g_sum: &DVector<f64>,
    h_list: &[DMatrix<f64>],
    alpha: f64,
    rho2: f64,
) -> Result<MixedVector> {
    validate_qp_inputs(z_k, g_sum, rho2, h_list.len())?;
    let n = z_k.dim();
    let n_c = z_k.n_c();
    let mut m = DMatrix::identity(n, n) * (h_list.len() as f64 * rho2);
    for h in h_list {
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: h.nrows(),
            });
        }
        m += h;
    }
    let mut c = g_sum.clone();
    for (k, slope) in penalty_slope(z_k, alpha).enumerate() {
        c[n_c + k] += slope;
    }
    // Work in the step Δ = z − zᵏ; Δ = 0 is feasible.
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for (k, &d) in z_k.disc().iter().enumerate() {
        lower[n_c + k] = -d;
        upper[n_c + k] = 1.0 - d;
    }
    let sol = boxqp::solve_box_qp(&m, &c, &lower, &upper, &DVector::zeros(n), QP_MAX_ITER);

    let mut z = z_k.as_vector() + &sol.x;
    // Δ_d sits exactly on its bound after the solve; re-clamp so z_d does too.
    for j in n_c..n {
        z[j] = z[j].clamp(0.0, 1.0);
    }
    let z = z_k.with_data(z);
    if sol.residual > QP_KKT_TOL {
        return Err(Error::QpNonConvergence {
            best: z,
            residual: sol.residual,
        });
    }
    Ok(z)
}

fn validate_qp_inputs(z_k: &MixedVector, g_sum: &DVector<f64>, rho2: f64, n_agents: usize) -> Result<()> {
    if !(rho2 > 0.0) {
        return Err(Error::InvalidParams(format!("rho2 must be positive, got {rho2}")));
    }
    if n_agents == 0 {
        return Err(Error::InvalidParams("at least one agent is required".into()));
    }
    if g_sum.len() != z_k.dim() {
        return Err(Error::DimensionMismatch {
            expected: z_k.dim(),
            found: g_sum.len(),
        });
    }
    check_in_box(z_k)
}

/// `E(z) = Σ f_i(z) + α γ(z)`.
pub fn energy(problem: &ProblemInstance, z: &MixedVector, alpha: f64) -> f64 {
    problem.total_value(z) + alpha * gamma(z)
}

/// `Σgᵀ(z⁺ − z) ≤ α(γ(z) − γ(z⁺)) − (Nρ₂/2)‖z⁺ − z‖² + tol`.
pub fn check_lemma1(
    g_sum: &DVector<f64>,
    z_k: &MixedVector,
    z_k1: &MixedVector,
    alpha: f64,
    rho2: f64,
    n_agents: usize,
    tol: f64,
) -> bool {
    let step = z_k1.as_vector() - z_k.as_vector();
    let lhs = g_sum.dot(&step);
    let rhs = alpha * (gamma(z_k) - gamma(z_k1)) - 0.5 * n_agents as f64 * rho2 * step.norm_squared();
    lhs <= rhs + tol
}

struct Evaluation {
    g_sum: DVector<f64>,
    hessians: Vec<DMatrix<f64>>,
}

fn evaluate_agents(problem: &ProblemInstance, z: &MixedVector, with_hessians: bool) -> Evaluation {
    let per_agent: Vec<(DVector<f64>, Option<DMatrix<f64>>)> = problem
        .objectives()
        .par_iter()
        .map(|obj| {
            let h = with_hessians.then(|| regularize(&obj.hessian(z)));
            (obj.gradient(z), h)
        })
        .collect();
    // Fixed summation order keeps runs bitwise reproducible.
    let mut g_sum = DVector::zeros(z.dim());
    let mut hessians = Vec::new();
    for (g, h) in per_agent {
        g_sum += g;
        hessians.extend(h);
    }
    Evaluation { g_sum, hessians }
}

pub fn run_stage2(problem: &ProblemInstance, params: &AlgoParams, z_init: &MixedVector) -> Result<Stage2Result> {
    params.validate()?;
    if z_init.dim() != problem.dim() || z_init.n_c() != problem.n_c() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            found: z_init.dim(),
        });
    }
    if !z_init.is_finite() {
        return Err(Error::NonFinite("stage II initial point"));
    }
    let exact_penalty = params.experimental_exact_penalty;
    if exact_penalty && params.accelerated {
        return Err(Error::InvalidParams(
            "the exact penalty is only available with the diagonal coordinator QP".into(),
        ));
    }
    let n_agents = problem.num_agents();
    let energy_check_enforced = problem.lipschitz_bound().is_some_and(|l| params.rho2 > l);

    let mut z = z_init.clamp_disc();
    let mut alpha = params.alpha0;
    let mut energy_prev = energy(problem, &z, alpha);
    let mut trace = Vec::new();
    let mut total = 0usize;
    let mut bumps = 0usize;
    let mut lemma1_violations = 0;
    let mut energy_violations = 0;
    let mut capped_inner_loops = 0;
    let mut gamma_at_inner_exit = Vec::new();
    let mut best: Option<(f64, MixedVector)> = None;

    loop {
        let mut settled = false;
        for _ in 0..params.max_iter_inner {
            let eval = evaluate_agents(problem, &z, params.accelerated);
            let z_next = if params.accelerated {
                stage2_qp_accelerated(&z, &eval.g_sum, &eval.hessians, alpha, params.rho2)?
            } else if exact_penalty {
                stage2_qp_exact_penalty(&z, &eval.g_sum, alpha, params.rho2, n_agents)?
            } else {
                stage2_qp(&z, &eval.g_sum, alpha, params.rho2, n_agents)?
            };
            total += 1;

            if !check_lemma1(&eval.g_sum, &z, &z_next, alpha, params.rho2, n_agents, LEMMA1_TOL) {
                lemma1_violations += 1;
            }
            let step_norm = z_next.distance(&z);
            let energy_next = energy(problem, &z_next, alpha);
            if step_norm > 0.0 && energy_next > energy_prev + ENERGY_TOL {
                energy_violations += 1;
            }
            energy_prev = energy_next;
            z = z_next;
            trace.push(TraceRecord {
                stage: StageTag::Stage2Inner,
                iter: total,
                step_norm,
                objective: problem.total_value(&z),
                gamma: gamma(&z),
                alpha,
                energy: Some(energy_next),
                z: z.clone(),
            });
            if step_norm <= params.eps_inner {
                settled = true;
                break;
            }
        }
        if !settled {
            capped_inner_loops += 1;
        }

        let g = gamma(&z);
        gamma_at_inner_exit.push(g);
        if best.as_ref().is_none_or(|(bg, _)| g < *bg) {
            best = Some((g, z.clone()));
        }
        if g < params.eps_outer {
            break;
        }
        if bumps >= params.max_outer {
            let (gamma, best) = best.expect("at least one inner loop ran");
            return Err(Error::MaxOuterExceeded { best, gamma, bumps });
        }
        alpha *= params.beta;
        bumps += 1;
        energy_prev = energy(problem, &z, alpha);
        trace.push(TraceRecord {
            stage: StageTag::Stage2OuterBump,
            iter: total,
            step_norm: 0.0,
            objective: problem.total_value(&z),
            gamma: g,
            alpha,
            energy: Some(energy_prev),
            z: z.clone(),
        });
    }

    let z_rounded = z.round_disc();
    Ok(Stage2Result {
        final_objective: problem.total_value(&z_rounded),
        z_rounded,
        z_star: z,
        inner_iterations_total: total,
        outer_bumps: bumps,
        final_alpha: alpha,
        trace,
        lemma1_violations,
        energy_violations,
        energy_check_enforced,
        gamma_at_inner_exit,
        capped_inner_loops,
    })
}
