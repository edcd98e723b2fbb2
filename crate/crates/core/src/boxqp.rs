//! Strictly convex QP with (possibly one-sided or absent) box bounds:
//! `min ½xᵀMx + cᵀx  s.t.  lower ≤ x ≤ upper`.
//!
//! Primal active-set: Newton steps on the free variables, ratio test against
//! the bounds, and release of the bound with the most wrongly signed
//! multiplier once the free subproblem is solved.

use nalgebra::{DMatrix, DVector};

use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    /// Natural residual `‖x − P(x − ∇q(x)/s)‖∞` with `s` the largest diagonal entry of M.
    pub residual: f64,
    pub iterations: usize,
}

/// Scaled projected-gradient residual of a candidate point.
pub fn kkt_residual(
    m: &DMatrix<f64>,
    c: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    x: &DVector<f64>,
) -> f64 {
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let g = m * x + c;
    (0..x.len())
        .map(|j| (x[j] - (x[j] - g[j] / scale).clamp(lower[j], upper[j])).abs())
        .fold(0.0, f64::max)
}

/// `x0` must be feasible. Returns the best iterate with its residual even when
/// the iteration cap is hit; the caller decides whether that is acceptable.
pub fn solve_box_qp(
    m: &DMatrix<f64>,
    c: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    x0: &DVector<f64>,
    max_iter: usize,
) -> BoxQpSolution {
    let n = c.len();
    let mut x = x0.clone();
    let mut state = vec![Bound::Free; n];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == Bound::Free).collect();
        let grad = m * &x + c;

        let mut step = DVector::zeros(n);
        if !free.is_empty() {
            let m_ff = m.select_rows(&free).select_columns(&free);
            let g_f = DVector::from_iterator(free.len(), free.iter().map(|&j| -grad[j]));
            let p_f = linalg::cholesky_solve(&m_ff, &g_f).expect("principal submatrix of SPD matrix");
            for (k, &j) in free.iter().enumerate() {
                step[j] = p_f[k];
            }
        }

        let x_scale = 1.0 + x.amax();
        if step.amax() <= 1e-12 * x_scale {
            // Free subproblem solved: inspect multipliers of the bounds.
            let mult_tol = 1e-14 * (m.amax() * x_scale + c.amax()).max(1.0);
            let mut worst: Option<(usize, f64)> = None;
            for j in 0..n {
                let violation = match state[j] {
                    Bound::Lower => -grad[j],
                    Bound::Upper => grad[j],
                    Bound::Free => continue,
                };
                if violation > mult_tol && worst.is_none_or(|(_, w)| violation > w) {
                    worst = Some((j, violation));
                }
            }
            match worst {
                Some((j, _)) => state[j] = Bound::Free,
                None => break,
            }
            continue;
        }

        let mut t = 1.0;
        let mut blocking = None;
        for j in 0..n {
            if state[j] != Bound::Free {
                continue;
            }
            let (limit, side) = if step[j] < 0.0 {
                ((lower[j] - x[j]) / step[j], Bound::Lower)
            } else if step[j] > 0.0 {
                ((upper[j] - x[j]) / step[j], Bound::Upper)
            } else {
                continue;
            };
            if limit < t {
                t = limit.max(0.0);
                blocking = Some((j, side));
            }
        }
        x += &step * t;
        if let Some((j, side)) = blocking {
            state[j] = side;
            x[j] = if side == Bound::Lower { lower[j] } else { upper[j] };
        }
    }

    for j in 0..n {
        x[j] = x[j].clamp(lower[j], upper[j]);
    }
    let residual = kkt_residual(m, c, lower, upper, &x);
    BoxQpSolution {
        x,
        residual,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unconstrained_matches_linear_solve() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = DVector::from_vec(vec![-1.0, 1.0]);
        let inf = DVector::from_element(2, f64::INFINITY);
        let sol = solve_box_qp(&m, &c, &(-&inf), &inf, &DVector::zeros(2), 50);
        let expected = m.clone().lu().solve(&(-&c)).unwrap();
        assert!((sol.x - expected).amax() < 1e-12);
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn diagonal_case_is_a_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let d = DVector::from_fn(5, |_, _| rng.random_range(0.1..5.0));
            let c = DVector::from_fn(5, |_, _| rng.random_range(-10.0..10.0));
            let lo = DVector::from_element(5, -1.0);
            let hi = DVector::from_element(5, 2.0);
            let sol = solve_box_qp(&DMatrix::from_diagonal(&d), &c, &lo, &hi, &DVector::zeros(5), 100);
            for j in 0..5 {
                let expected = (-c[j] / d[j]).clamp(-1.0, 2.0);
                assert!((sol.x[j] - expected).abs() < 1e-12);
            }
        }
    }
}
