//! Agent objectives with analytic gradients and Hessians.
//!
//! The two sensor-localization benchmarks share one parameter set per agent:
//!
//! ```text
//! convex:     f(y, b) = ½‖y − ζα‖² + ½‖b − ζβ‖²
//! nonconvex:  f(y, b) = convex part + ½ Σ_j ((y_j − b_j)² − ζγ_j)²
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::MixedVector;

/// A smooth per-agent objective. Evaluations are pure, so handles are shared
/// freely across threads.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &MixedVector) -> f64;
    fn gradient(&self, x: &MixedVector) -> DVector<f64>;
    fn hessian(&self, x: &MixedVector) -> DMatrix<f64>;
    fn is_convex(&self) -> bool;

    /// Global gradient-Lipschitz constant, if one is known analytically.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Strong-convexity modulus. Informational only.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }
}

/// Per-agent sensor parameters, drawn from a standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorParams {
    pub zeta_alpha: Vec<f64>,
    pub zeta_beta: Vec<f64>,
    pub zeta_gamma: Vec<f64>,
}

impl SensorParams {
    /// Draw `zeta_alpha` (n_c), then `zeta_beta` (n_d), then `zeta_gamma` (n_d).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n_c: usize, n_d: usize) -> Self {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let zeta_alpha = draw(n_c);
        let zeta_beta = draw(n_d);
        let zeta_gamma = draw(n_d);
        Self {
            zeta_alpha,
            zeta_beta,
            zeta_gamma,
        }
    }

    pub fn n_c(&self) -> usize {
        self.zeta_alpha.len()
    }

    pub fn n_d(&self) -> usize {
        self.zeta_beta.len()
    }
}

fn check_dim(x: &MixedVector, n_c: usize, n_d: usize) {
    debug_assert_eq!(x.n_c(), n_c, "continuous block length");
    debug_assert_eq!(x.n_d(), n_d, "discrete block length");
}

#[derive(Debug, Clone)]
pub struct ConvexSensor {
    params: SensorParams,
}

pub fn convex_sensor_objective(params: SensorParams) -> Result<ConvexSensor> {
    if !params.zeta_gamma.is_empty() && params.zeta_gamma.len() != params.n_d() {
        return Err(Error::DimensionMismatch {
            expected: params.n_d(),
            found: params.zeta_gamma.len(),
        });
    }
    if params
        .zeta_alpha
        .iter()
        .chain(&params.zeta_beta)
        .chain(&params.zeta_gamma)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("sensor parameters"));
    }
    Ok(ConvexSensor { params })
}

impl ConvexSensor {
    pub fn params(&self) -> &SensorParams {
        &self.params
    }

    fn residual(&self, x: &MixedVector) -> DVector<f64> {
        let p = &self.params;
        check_dim(x, p.n_c(), p.n_d());
        let target = p.zeta_alpha.iter().chain(&p.zeta_beta);
        DVector::from_iterator(
            x.dim(),
            x.as_vector().iter().zip(target).map(|(xi, t)| xi - t),
        )
    }
}

impl Objective for ConvexSensor {
    fn dim(&self) -> usize {
        self.params.n_c() + self.params.n_d()
    }

    fn value(&self, x: &MixedVector) -> f64 {
        0.5 * self.residual(x).norm_squared()
    }

    fn gradient(&self, x: &MixedVector) -> DVector<f64> {
        self.residual(x)
    }

    fn hessian(&self, _x: &MixedVector) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim())
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Convex sensor term plus the quartic coupling between `y_j` and `b_j`.
#[derive(Debug, Clone)]
pub struct NonconvexSensor {
    base: ConvexSensor,
}

pub fn nonconvex_sensor_objective(params: SensorParams) -> Result<NonconvexSensor> {
    let (n_c, n_d) = (params.n_c(), params.n_d());
    if n_c != n_d {
        return Err(Error::UnequalBlocks { n_c, n_d });
    }
    if params.zeta_gamma.len() != n_d {
        return Err(Error::DimensionMismatch {
            expected: n_d,
            found: params.zeta_gamma.len(),
        });
    }
    Ok(NonconvexSensor {
        base: convex_sensor_objective(params)?,
    })
}

impl NonconvexSensor {
    pub fn params(&self) -> &SensorParams {
        &self.base.params
    }

    /// Per coordinate pair: (r, r² − ζγ) with r = y_j − b_j.
    fn coupling(&self, x: &MixedVector) -> impl Iterator<Item = (f64, f64)> + '_ {
        let zg = &self.base.params.zeta_gamma;
        let (y, b) = (x.cont().to_vec(), x.disc().to_vec());
        (0..zg.len()).map(move |j| {
            let r = y[j] - b[j];
            (r, r * r - zg[j])
        })
    }
}

impl Objective for NonconvexSensor {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &MixedVector) -> f64 {
        let quartic: f64 = self.coupling(x).map(|(_, q)| q * q).sum();
        self.base.value(x) + 0.5 * quartic
    }

    fn gradient(&self, x: &MixedVector) -> DVector<f64> {
        let mut g = self.base.gradient(x);
        let n_c = x.n_c();
        for (j, (r, q)) in self.coupling(x).enumerate() {
            let d = 2.0 * r * q;
            g[j] += d;
            g[n_c + j] -= d;
        }
        g
    }

    fn hessian(&self, x: &MixedVector) -> DMatrix<f64> {
        let mut h = self.base.hessian(x);
        let n_c = x.n_c();
        for (j, (r, q)) in self.coupling(x).enumerate() {
            // d²/dr² of ½q² = 2q + 4r²
            let c = 2.0 * q + 4.0 * r * r;
            h[(j, j)] += c;
            h[(n_c + j, n_c + j)] += c;
            h[(j, n_c + j)] -= c;
            h[(n_c + j, j)] -= c;
        }
        h
    }

    fn is_convex(&self) -> bool {
        false
    }
}

/// `½ xᵀQx + cᵀx` with Q symmetric positive definite.
#[derive(Debug, Clone)]
pub struct Quadratic {
    q: DMatrix<f64>,
    c: DVector<f64>,
    n_c: usize,
    eig_min: f64,
    eig_max: f64,
}

/// `n_c` is the continuous/discrete split the objective expects; it does not
/// change the function.
pub fn quadratic_objective(q: DMatrix<f64>, c: DVector<f64>, n_c: usize) -> Result<Quadratic> {
    if !q.is_square() || q.nrows() != c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            found: q.nrows(),
        });
    }
    if n_c > c.len() {
        return Err(Error::DimensionMismatch {
            expected: c.len(),
            found: n_c,
        });
    }
    if !linalg::is_symmetric(&q, 1e-12 * (1.0 + q.amax())) {
        return Err(Error::NotPositiveDefinite);
    }
    let eig = linalg::symmetric_eigenvalues(&q);
    let (eig_min, eig_max) = (eig.min(), eig.max());
    if eig_min <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(Quadratic {
        q,
        c,
        n_c,
        eig_min,
        eig_max,
    })
}

impl Quadratic {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn split(&self) -> usize {
        self.n_c
    }

    /// Unconstrained minimizer `−Q⁻¹c`.
    pub fn minimizer(&self) -> MixedVector {
        let x = linalg::cholesky_solve(&self.q, &(-&self.c)).expect("Q is SPD");
        MixedVector::new(x, self.n_c)
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn value(&self, x: &MixedVector) -> f64 {
        let x = x.as_vector();
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    fn gradient(&self, x: &MixedVector) -> DVector<f64> {
        &self.q * x.as_vector() + &self.c
    }

    fn hessian(&self, _x: &MixedVector) -> DMatrix<f64> {
        self.q.clone()
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.eig_max)
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.eig_min)
    }
}

/// The constant zero function.
#[derive(Debug, Clone, Copy)]
pub struct Zero {
    pub dim: usize,
}

impl Objective for Zero {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &MixedVector) -> f64 {
        0.0
    }

    fn gradient(&self, _x: &MixedVector) -> DVector<f64> {
        DVector::zeros(self.dim)
    }

    fn hessian(&self, _x: &MixedVector) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Axis-aligned box `[lower, upper]^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn symmetric(half_width: f64) -> Self {
        Self {
            lower: -half_width,
            upper: half_width,
        }
    }

    pub fn contains(&self, x: &MixedVector) -> bool {
        x.as_vector()
            .iter()
            .all(|v| (self.lower..=self.upper).contains(v))
    }
}

const LIPSCHITZ_SEED: u64 = 0x5eed_11b5;
pub const LIPSCHITZ_MARGIN: f64 = 1.1;

/// Sampled smoothness constant over a box: the largest Hessian eigenvalue
/// magnitude seen at `samples` uniform points, times a 10% margin.
///
/// Sampling uses a fixed seed, so the estimate is reproducible.
pub fn estimate_lipschitz(obj: &dyn Objective, bounds: Bounds, samples: usize, n_c: usize) -> f64 {
    assert!(samples >= 2, "need at least two samples");
    assert!(bounds.lower <= bounds.upper, "empty box");
    let n = obj.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(LIPSCHITZ_SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = DVector::from_fn(n, |_, _| rng.random_range(bounds.lower..=bounds.upper));
        let h = obj.hessian(&MixedVector::new(x, n_c));
        worst = worst.max(linalg::spectral_radius(&h));
    }
    LIPSCHITZ_MARGIN * worst
}
