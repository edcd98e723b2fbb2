//! Value types shared by the solver stages.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Objective;

/// Slack allowed when validating that a relaxed Boolean block sits in the unit box.
pub const BOX_SLACK: f64 = 1e-9;

/// A point split into a continuous block followed by a relaxed-Boolean block.
///
/// Both blocks live in one contiguous vector so the coordinator algebra can
/// treat the point as a plain vector of length `n_c + n_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedVector {
    data: DVector<f64>,
    n_c: usize,
}

impl MixedVector {
    pub fn new(data: DVector<f64>, n_c: usize) -> Self {
        assert!(n_c <= data.len(), "split index {n_c} beyond length {}", data.len());
        Self { data, n_c }
    }

    pub fn from_parts(cont: &[f64], disc: &[f64]) -> Self {
        let data = DVector::from_iterator(
            cont.len() + disc.len(),
            cont.iter().chain(disc.iter()).copied(),
        );
        Self {
            data,
            n_c: cont.len(),
        }
    }

    pub fn zeros(n_c: usize, n_d: usize) -> Self {
        Self {
            data: DVector::zeros(n_c + n_d),
            n_c,
        }
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_d(&self) -> usize {
        self.data.len() - self.n_c
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn cont(&self) -> &[f64] {
        &self.data.as_slice()[..self.n_c]
    }

    pub fn disc(&self) -> &[f64] {
        &self.data.as_slice()[self.n_c..]
    }

    pub fn disc_mut(&mut self) -> &mut [f64] {
        let n_c = self.n_c;
        &mut self.data.as_mut_slice()[n_c..]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    /// Same split, new contents.
    pub fn with_data(&self, data: DVector<f64>) -> Self {
        Self::new(data, self.n_c)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &MixedVector) -> f64 {
        (&self.data - &other.data).norm()
    }

    /// Clamp the discrete block into `[0, 1]`.
    pub fn clamp_disc(&self) -> Self {
        let mut out = self.clone();
        for v in out.disc_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    /// Snap every discrete component to the nearer of {0, 1}; exactly 0.5 goes to 0.
    pub fn round_disc(&self) -> Self {
        let mut out = self.clone();
        for v in out.disc_mut() {
            *v = if *v > 0.5 { 1.0 } else { 0.0 };
        }
        out
    }
}

/// Complementarity measure `(1 - z_d)^T z_d`, evaluated without clamping.
pub fn gamma(z: &MixedVector) -> f64 {
    z.disc().iter().map(|&d| (1.0 - d) * d).sum()
}

/// Whether `gamma(z) < eps_outer`. The discrete block must lie in the unit box.
pub fn is_boolean_feasible(z: &MixedVector, eps_outer: f64) -> Result<bool> {
    check_in_box(z)?;
    Ok(gamma(z) < eps_outer)
}

pub(crate) fn check_in_box(z: &MixedVector) -> Result<()> {
    for (index, &value) in z.disc().iter().enumerate() {
        if !(-BOX_SLACK..=1.0 + BOX_SLACK).contains(&value) {
            return Err(Error::OutOfBox { index, value });
        }
    }
    Ok(())
}

/// N agent objectives over a common mixed space.
#[derive(Clone)]
pub struct ProblemInstance {
    n_c: usize,
    n_d: usize,
    objectives: Vec<Arc<dyn Objective>>,
    lipschitz_bound: Option<f64>,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("num_agents", &self.objectives.len())
            .field("n_c", &self.n_c)
            .field("n_d", &self.n_d)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish()
    }
}

impl ProblemInstance {
    pub fn new(n_c: usize, n_d: usize, objectives: Vec<Arc<dyn Objective>>) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::InvalidParams("at least one agent is required".into()));
        }
        for obj in &objectives {
            if obj.dim() != n_c + n_d {
                return Err(Error::DimensionMismatch {
                    expected: n_c + n_d,
                    found: obj.dim(),
                });
            }
        }
        let lipschitz_bound = objectives
            .iter()
            .map(|o| o.lipschitz())
            .collect::<Option<Vec<_>>>()
            .map(|ls| ls.into_iter().fold(0.0, f64::max));
        Ok(Self {
            n_c,
            n_d,
            objectives,
            lipschitz_bound,
        })
    }

    pub fn with_lipschitz_bound(mut self, l: f64) -> Self {
        self.lipschitz_bound = Some(l);
        self
    }

    pub fn num_agents(&self) -> usize {
        self.objectives.len()
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_d(&self) -> usize {
        self.n_d
    }

    pub fn dim(&self) -> usize {
        self.n_c + self.n_d
    }

    pub fn objectives(&self) -> &[Arc<dyn Objective>] {
        &self.objectives
    }

    /// Common smoothness constant, when every agent reports one (or one was set).
    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz_bound
    }

    pub fn is_convex(&self) -> bool {
        self.objectives.iter().all(|o| o.is_convex())
    }

    /// `sum_i f_i(z)`.
    pub fn total_value(&self, z: &MixedVector) -> f64 {
        self.objectives.iter().map(|o| o.value(z)).sum()
    }
}

/// Local state of one agent during stage I.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub x: MixedVector,
    pub lambda: DVector<f64>,
    pub grad: DVector<f64>,
    /// Regularized (positive definite) Hessian approximation.
    pub hess: DMatrix<f64>,
}

impl AgentState {
    pub fn new(x: MixedVector, lambda: DVector<f64>) -> Self {
        let n = x.dim();
        Self {
            x,
            lambda,
            grad: DVector::zeros(n),
            hess: DMatrix::identity(n, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoParams {
    pub rho1: f64,
    pub rho2: f64,
    pub alpha0: f64,
    pub beta: f64,
    pub eps_stage1: f64,
    pub eps_inner: f64,
    pub eps_outer: f64,
    pub max_iter_stage1: usize,
    pub max_iter_inner: usize,
    pub max_outer: usize,
    /// Use the Hessian-weighted stage II coordinator QP.
    pub accelerated: bool,
    /// Use the averaging coordinator that assumes `H_i = rho1 * I`.
    pub convex_coordinator: bool,
    /// Replace the linearized Boolean penalty with the exact nonconvex one.
    /// Demonstration only.
    pub experimental_exact_penalty: bool,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self {
            rho1: 10.0,
            rho2: 10.0,
            alpha0: 1.0,
            beta: 2.0,
            eps_stage1: 1e-6,
            eps_inner: 1e-6,
            eps_outer: 1e-6,
            max_iter_stage1: 1000,
            max_iter_inner: 10_000,
            max_outer: 200,
            accelerated: false,
            convex_coordinator: false,
            experimental_exact_penalty: false,
        }
    }
}

impl AlgoParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("alpha0", self.alpha0),
            ("eps_stage1", self.eps_stage1),
            ("eps_inner", self.eps_inner),
            ("eps_outer", self.eps_outer),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta.is_finite() && self.beta > 1.0) {
            return Err(Error::InvalidParams(format!("beta must exceed 1, got {}", self.beta)));
        }
        for (name, v) in [
            ("max_iter_stage1", self.max_iter_stage1),
            ("max_iter_inner", self.max_iter_inner),
            ("max_outer", self.max_outer),
        ] {
            if v == 0 {
                return Err(Error::InvalidParams(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Stage1,
    Stage2Inner,
    Stage2OuterBump,
    /// Projected ADMM comparison run.
    Baseline,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::Stage1 => "stage1",
            StageTag::Stage2Inner => "stage2_inner",
            StageTag::Stage2OuterBump => "stage2_outer_bump",
            StageTag::Baseline => "baseline",
        }
    }
}

/// One logged iteration.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub stage: StageTag,
    pub iter: usize,
    pub z: MixedVector,
    pub step_norm: f64,
    pub objective: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Stage II only.
    pub energy: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma_of_boolean_points_is_zero() {
        assert_eq!(gamma(&MixedVector::from_parts(&[], &[0.0; 10])), 0.0);
        assert_eq!(gamma(&MixedVector::from_parts(&[], &[1.0; 10])), 0.0);
    }

    #[test]
    fn gamma_at_half_is_quarter_per_component() {
        assert_eq!(gamma(&MixedVector::from_parts(&[3.0], &[0.5; 10])), 2.5);
    }

    #[test]
    fn boolean_feasibility() {
        let zeros = MixedVector::from_parts(&[], &[0.0; 10]);
        assert!(is_boolean_feasible(&zeros, 1e-6).unwrap());
        let half = MixedVector::from_parts(&[], &[0.5; 10]);
        assert!(!is_boolean_feasible(&half, 1e-6).unwrap());
        let mut disc = [0.0; 10];
        disc[0] = 1e-4;
        let near = MixedVector::from_parts(&[], &disc);
        assert!((gamma(&near) - 9.999e-5).abs() < 1e-12);
        assert!(!is_boolean_feasible(&near, 1e-6).unwrap());
    }

    #[test]
    fn feasibility_rejects_points_outside_box() {
        let z = MixedVector::from_parts(&[], &[0.2, 1.1]);
        assert!(matches!(
            is_boolean_feasible(&z, 1e-6),
            Err(Error::OutOfBox { index: 1, .. })
        ));
        // within the slack is accepted
        let z = MixedVector::from_parts(&[], &[-1e-10, 1.0 + 1e-10]);
        assert!(is_boolean_feasible(&z, 1e-6).is_ok());
    }

    #[test]
    fn rounding_breaks_ties_toward_zero() {
        let z = MixedVector::from_parts(&[0.7], &[0.5, 0.5000001, 0.49, 1.0]);
        assert_eq!(z.round_disc().disc(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(z.round_disc().cont(), &[0.7]);
    }

    #[test]
    fn params_validation() {
        assert!(AlgoParams::default().validate().is_ok());
        let bad = AlgoParams {
            beta: 1.0,
            ..AlgoParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = AlgoParams {
            eps_inner: 0.0,
            ..AlgoParams::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn gamma_zero_iff_boolean(bits in prop::collection::vec(any::<bool>(), 1..12),
                                  frac in 1e-6f64..(1.0 - 1e-6), pos in 0usize..12) {
            let mut disc: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let z = MixedVector::from_parts(&[], &disc);
            prop_assert_eq!(gamma(&z), 0.0);
            let i = pos % disc.len();
            disc[i] = frac;
            let z = MixedVector::from_parts(&[], &disc);
            prop_assert!(gamma(&z) > 0.0);
        }

        #[test]
        fn gamma_symmetric_under_flip(disc in prop::collection::vec(0.0f64..=1.0, 0..16)) {
            let flipped: Vec<f64> = disc.iter().map(|d| 1.0 - d).collect();
            let a = gamma(&MixedVector::from_parts(&[], &disc));
            let b = gamma(&MixedVector::from_parts(&[], &flipped));
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            prop_assert!(a >= 0.0);
        }
    }
}
