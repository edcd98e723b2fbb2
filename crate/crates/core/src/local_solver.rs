//! Per-agent augmented-Lagrangian subproblem
//! `min_x f(x) + λᵀx + (ρ/2)‖x − z‖²`, solved by damped Newton.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::objectives::Objective;
use crate::types::MixedVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Absolute bound on the subproblem gradient norm.
    pub grad_tol: f64,
    pub max_steps: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_steps: 100,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
        }
    }
}

/// Shift a symmetric matrix so it becomes positive definite.
///
/// With `σ` the smallest eigenvalue, the matrix is returned unchanged when
/// `σ > 0`, otherwise `1.1(|σ| + 0.1)` is added to the diagonal, which lifts
/// the smallest eigenvalue to at least 0.11.
pub fn regularize(h: &DMatrix<f64>) -> DMatrix<f64> {
    let sigma = linalg::min_eigenvalue(h);
    if sigma > 0.0 {
        h.clone()
    } else {
        let shift = 1.1 * (sigma.abs() + 0.1);
        let n = h.nrows();
        h + DMatrix::identity(n, n) * shift
    }
}

const MIN_STEP: f64 = 1e-12;

/// Solve one agent's subproblem, warm-started at `x0`.
///
/// Newton systems use `regularize(∇²f(x)) + ρI`, which is positive definite,
/// so every direction is a descent direction for the subproblem.
pub fn solve_local(
    obj: &dyn Objective,
    lambda: &DVector<f64>,
    z: &MixedVector,
    rho1: f64,
    x0: &MixedVector,
    settings: &NewtonSettings,
) -> Result<MixedVector> {
    if !(rho1 > 0.0) {
        return Err(Error::InvalidParams(format!("rho1 must be positive, got {rho1}")));
    }
    if !z.is_finite() || !x0.is_finite() || lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("local subproblem inputs"));
    }
    let n = z.dim();
    if lambda.len() != n || x0.dim() != n || obj.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if lambda.len() != n { lambda.len() } else { x0.dim() },
        });
    }

    let value = |x: &MixedVector| {
        obj.value(x) + lambda.dot(x.as_vector()) + 0.5 * rho1 * (x.as_vector() - z.as_vector()).norm_squared()
    };
    let gradient =
        |x: &MixedVector| obj.gradient(x) + lambda + (x.as_vector() - z.as_vector()) * rho1;

    let mut x = x0.clone();
    let mut phi = value(&x);
    let mut grad = gradient(&x);
    let mut grad_norm = grad.norm();

    for _ in 0..settings.max_steps {
        if grad_norm <= settings.grad_tol {
            return Ok(x);
        }
        let hess = regularize(&obj.hessian(&x)) + DMatrix::identity(n, n) * rho1;
        let dir = -linalg::cholesky_solve(&hess, &grad)?;
        let slope = grad.dot(&dir);

        // Once the predicted decrease is below the resolution of φ, Armijo
        // accepts steps that only look flat; judge by the gradient instead.
        let resolvable = -slope > 64.0 * f64::EPSILON * phi.abs().max(1.0);
        let mut t = 1.0;
        let accepted = loop {
            if !resolvable {
                break None;
            }
            let trial = x.with_data(x.as_vector() + &dir * t);
            let trial_phi = value(&trial);
            if trial_phi <= phi + settings.armijo_c * t * slope {
                break Some((trial, trial_phi));
            }
            t *= settings.backtrack_factor;
            if t < MIN_STEP {
                break None;
            }
        };
        let (next, next_phi) = match accepted {
            Some(step) => step,
            None => {
                let full = x.with_data(x.as_vector() + &dir);
                if gradient(&full).norm() < grad_norm {
                    let full_phi = value(&full);
                    (full, full_phi)
                } else {
                    break;
                }
            }
        };
        x = next;
        phi = next_phi;
        grad = gradient(&x);
        grad_norm = grad.norm();
    }

    if grad_norm <= settings.grad_tol {
        Ok(x)
    } else {
        Err(Error::NonConvergence {
            best: x,
            grad_norm,
            steps: settings.max_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{
        convex_sensor_objective, nonconvex_sensor_objective, quadratic_objective, SensorParams,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn regularize_leaves_pd_matrices_alone() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(regularize(&id), id);
    }

    #[test]
    fn regularize_formula() {
        let r = regularize(&diag(&[-1.0, 2.0]));
        assert!((r[(0, 0)] - 0.21).abs() < 1e-14);
        assert!((r[(1, 1)] - 3.21).abs() < 1e-14);
        assert_eq!(r[(0, 1)], 0.0);

        let r = regularize(&DMatrix::zeros(3, 3));
        assert!((r - DMatrix::identity(3, 3) * 0.11).amax() < 1e-15);
    }

    proptest! {
        #[test]
        fn regularized_matrices_are_positive_definite(
            entries in prop::collection::vec(-5.0f64..5.0, 16),
            scale in prop::sample::select(vec![1.0, 1e-8, 1e3]),
        ) {
            let a = DMatrix::from_row_slice(4, 4, &entries) * scale;
            let h = linalg::symmetrize(&a);
            let r = regularize(&h);
            prop_assert!(linalg::min_eigenvalue(&r) > 0.0);
        }
    }

    #[test]
    fn origin_is_stationary_for_identity_quadratic() {
        let f = quadratic_objective(DMatrix::identity(3, 3), DVector::zeros(3), 1).unwrap();
        let z = MixedVector::zeros(1, 2);
        let x = solve_local(&f, &DVector::zeros(3), &z, 1.0, &z, &NewtonSettings::default()).unwrap();
        assert_eq!(x.as_vector().norm(), 0.0);
    }

    #[test]
    fn identity_quadratic_shrinks_toward_center() {
        let f = quadratic_objective(DMatrix::identity(2, 2), DVector::zeros(2), 1).unwrap();
        let z0 = MixedVector::from_parts(&[3.0], &[-1.5]);
        let rho = 4.0;
        let x = solve_local(&f, &DVector::zeros(2), &z0, rho, &MixedVector::zeros(1, 1), &Default::default())
            .unwrap();
        let expected = z0.as_vector() * (rho / (1.0 + rho));
        assert!((x.as_vector() - expected).norm() < 1e-12);
    }

    #[test]
    fn convex_sensor_at_zero() {
        let f = convex_sensor_objective(SensorParams {
            zeta_alpha: vec![0.0; 3],
            zeta_beta: vec![0.0; 3],
            zeta_gamma: vec![],
        })
        .unwrap();
        let z = MixedVector::zeros(3, 3);
        let x = solve_local(&f, &DVector::zeros(6), &z, 10.0, &z, &Default::default()).unwrap();
        assert_eq!(x.as_vector().norm(), 0.0);
    }

    #[test]
    fn matches_closed_form_on_random_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let n = 5;
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            let c = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let lambda = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let z = MixedVector::new(DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)), 2);
            let rho = rng.random_range(0.1..50.0);
            let f = quadratic_objective(q.clone(), c.clone(), 2).unwrap();
            let x = solve_local(&f, &lambda, &z, rho, &MixedVector::zeros(2, 3), &Default::default())
                .unwrap();
            let expected = (q + DMatrix::identity(n, n) * rho)
                .lu()
                .solve(&(z.as_vector() * rho - c - &lambda))
                .unwrap();
            assert!((x.as_vector() - expected).amax() < 1e-8);
        }
    }

    #[test]
    fn stationarity_on_nonconvex_sensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let settings = NewtonSettings::default();
        for rho in [0.5, 10.0, 1e5] {
            let p = SensorParams::sample(&mut rng, 4, 4);
            let f = nonconvex_sensor_objective(p).unwrap();
            let lambda = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
            let z = MixedVector::new(DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0)), 4);
            let x = solve_local(&f, &lambda, &z, rho, &z, &settings).unwrap();
            let g = f.gradient(&x) + &lambda + (x.as_vector() - z.as_vector()) * rho;
            assert!(g.norm() <= settings.grad_tol, "rho {rho}: {}", g.norm());
        }
    }

    #[test]
    fn reports_non_convergence() {
        let f = quadratic_objective(DMatrix::identity(2, 2), DVector::zeros(2), 1).unwrap();
        let z = MixedVector::from_parts(&[1.0], &[1.0]);
        let settings = NewtonSettings {
            max_steps: 0,
            ..Default::default()
        };
        let err = solve_local(&f, &DVector::zeros(2), &z, 1.0, &MixedVector::zeros(1, 1), &settings)
            .unwrap_err();
        match err {
            Error::NonConvergence { grad_norm, best, .. } => {
                assert!(grad_norm > 0.0);
                assert_eq!(best, MixedVector::zeros(1, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
