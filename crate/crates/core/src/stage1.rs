//! Stage I: consensus ALADIN on the continuous relaxation.
//!
//! Each iteration runs the agents' local solves in parallel, collects their
//! gradients and regularized Hessians, and lets the coordinator solve the
//! consensus QP in closed form. The Boolean block is treated as an ordinary
//! unbounded continuous variable here.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::local_solver::{regularize, solve_local, NewtonSettings};
use crate::types::{gamma, AgentState, AlgoParams, MixedVector, ProblemInstance, StageTag, TraceRecord};

#[derive(Debug, Clone)]
pub struct Stage1Result {
    /// Relaxed consensus solution handed to stage II.
    pub z_star: MixedVector,
    /// `Σ f_i(z_star)`; a lower bound on the mixed-integer optimum for convex problems.
    pub relaxed_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
    pub agent_states: Vec<AgentState>,
    /// Largest `‖Σ λ_i‖∞` seen after any coordination step.
    pub max_dual_sum: f64,
}

/// Coordination with agent Hessians:
/// `z = (Σ H_i)⁻¹ Σ (H_i x_i − g_i)`, `λ_i = H_i (x_i − z) − g_i`.
pub fn coordinate_general(agents: &[AgentState]) -> (MixedVector, Vec<DVector<f64>>) {
    let first = agents.first().expect("at least one agent");
    let n = first.x.dim();
    let mut h_sum = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for a in agents {
        h_sum += &a.hess;
        rhs += &a.hess * a.x.as_vector() - &a.grad;
    }
    let z = linalg::cholesky_solve(&h_sum, &rhs).expect("sum of SPD Hessians is SPD");
    let lambdas = agents
        .iter()
        .map(|a| &a.hess * (a.x.as_vector() - &z) - &a.grad)
        .collect();
    (first.x.with_data(z), lambdas)
}

/// Coordination assuming `H_i = ρ I`:
/// `z = (1/N) Σ (x_i − g_i/ρ)`, `λ_i = ρ (x_i − z) − g_i`.
pub fn coordinate_convex(agents: &[AgentState], rho1: f64) -> (MixedVector, Vec<DVector<f64>>) {
    assert!(rho1 > 0.0, "rho1 must be positive");
    let first = agents.first().expect("at least one agent");
    let n = first.x.dim();
    let mut z = DVector::zeros(n);
    for a in agents {
        z += a.x.as_vector() - &a.grad / rho1;
    }
    z /= agents.len() as f64;
    let lambdas = agents
        .iter()
        .map(|a| (a.x.as_vector() - &z) * rho1 - &a.grad)
        .collect();
    (first.x.with_data(z), lambdas)
}

pub fn run_stage1(
    problem: &ProblemInstance,
    params: &AlgoParams,
    z0: &MixedVector,
    lambda0: &[DVector<f64>],
) -> Result<Stage1Result> {
    run_stage1_with(problem, params, z0, lambda0, &NewtonSettings::default())
}

pub fn run_stage1_with(
    problem: &ProblemInstance,
    params: &AlgoParams,
    z0: &MixedVector,
    lambda0: &[DVector<f64>],
    newton: &NewtonSettings,
) -> Result<Stage1Result> {
    params.validate()?;
    let n = problem.dim();
    if z0.dim() != n || z0.n_c() != problem.n_c() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z0.dim(),
        });
    }
    if lambda0.len() != problem.num_agents() {
        return Err(Error::DimensionMismatch {
            expected: problem.num_agents(),
            found: lambda0.len(),
        });
    }
    if !z0.is_finite() || lambda0.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stage I initial point"));
    }

    let mut agents: Vec<AgentState> = lambda0
        .iter()
        .map(|l| AgentState::new(z0.clone(), l.clone()))
        .collect();
    let mut z = z0.clone();
    let mut trace = Vec::new();
    let mut max_dual_sum: f64 = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=params.max_iter_stage1 {
        iterations = iter;
        agents
            .par_iter_mut()
            .zip(problem.objectives().par_iter())
            .enumerate()
            .try_for_each(|(agent, (state, obj))| -> Result<()> {
                let x = solve_local(obj.as_ref(), &state.lambda, &z, params.rho1, &state.x, newton)
                    .map_err(|e| Error::LocalSolve {
                        agent,
                        iteration: iter,
                        source: Box::new(e),
                    })?;
                state.grad = obj.gradient(&x);
                state.hess = regularize(&obj.hessian(&x));
                state.x = x;
                Ok(())
            })?;

        let (z_next, lambdas) = if params.convex_coordinator {
            coordinate_convex(&agents, params.rho1)
        } else {
            coordinate_general(&agents)
        };
        let dual_sum = lambdas.iter().fold(DVector::zeros(n), |acc, l| acc + l);
        max_dual_sum = max_dual_sum.max(dual_sum.amax());
        for (state, l) in agents.iter_mut().zip(lambdas) {
            state.lambda = l;
        }

        let step_norm = z_next.distance(&z);
        z = z_next;
        trace.push(TraceRecord {
            stage: StageTag::Stage1,
            iter,
            step_norm,
            objective: problem.total_value(&z),
            gamma: gamma(&z),
            alpha: 0.0,
            energy: None,
            z: z.clone(),
        });
        if step_norm <= params.eps_stage1 {
            converged = true;
            break;
        }
    }

    Ok(Stage1Result {
        relaxed_objective: problem.total_value(&z),
        z_star: z,
        iterations,
        converged,
        trace,
        agent_states: agents,
        max_dual_sum,
    })
}
