//! Experiment orchestration: seeded instances, full two-stage runs, the
//! optional ADMM comparison, invariant auditing and flat-file outputs.
//!
//! Output files written into the run directory:
//!
//! * `trace.csv` — one row per iteration, columns
//!   `stage,iter,step_norm,objective,gamma,alpha,energy` (energy empty for stage I)
//! * `summary.json` — [`Summary`]
//! * `config.resolved.json` — the [`RunConfig`] actually used, seed included
//! * `instance.json` — the generated agent parameters
//! * `baseline_trace.csv` — ADMM rows, only when the baseline ran
//!
//! Instances are drawn from `ChaCha8Rng::seed_from_u64(seed)`; normal variates
//! use `rand_distr::StandardNormal` (ziggurat). Agents are sampled in index
//! order, each drawing `ζα`, then `ζβ`, then `ζγ`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::admm::{run_admm_projected, AdmmResult};
use crate::error::{Error, Result};
use crate::objectives::{
    convex_sensor_objective, estimate_lipschitz, nonconvex_sensor_objective, quadratic_objective, Bounds,
    Objective, SensorParams,
};
use crate::stage1::{run_stage1, Stage1Result};
use crate::stage2::{run_stage2, Stage2Result};
use crate::types::{AlgoParams, MixedVector, ProblemInstance, TraceRecord};

/// Box over which the nonconvex smoothness constant is sampled.
pub const LIPSCHITZ_BOX: Bounds = Bounds::symmetric(3.0);
pub const LIPSCHITZ_SAMPLES: usize = 64;
pub const LOWER_BOUND_TOL: f64 = 1e-8;
pub const ADMM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Convex,
    Nonconvex,
    QuadraticOracle,
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex" => Ok(Self::Convex),
            "nonconvex" => Ok(Self::Nonconvex),
            "quadratic-oracle" => Ok(Self::QuadraticOracle),
            other => Err(Error::InvalidParams(format!("unknown problem kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem_kind: ProblemKind,
    pub num_agents: usize,
    pub n_c: usize,
    pub n_d: usize,
    pub params: AlgoParams,
    pub seed: u64,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub output_path: String,
    /// Draw the stage I starting point and duals from the seed instead of zeros.
    #[serde(default)]
    pub random_init: bool,
}

impl RunConfig {
    /// Benchmark defaults: N = 20, n_c = n_d = 10, ρ₁ = ρ₂ = 10 (convex) or 10⁵ (nonconvex).
    pub fn default_for(kind: ProblemKind) -> Self {
        let params = match kind {
            ProblemKind::Convex => AlgoParams {
                rho1: 10.0,
                rho2: 10.0,
                convex_coordinator: true,
                ..AlgoParams::default()
            },
            ProblemKind::Nonconvex => AlgoParams {
                rho1: 1e5,
                rho2: 1e5,
                convex_coordinator: false,
                ..AlgoParams::default()
            },
            ProblemKind::QuadraticOracle => AlgoParams::default(),
        };
        Self {
            problem_kind: kind,
            num_agents: 20,
            n_c: 10,
            n_d: 10,
            params,
            seed: 42,
            baseline: false,
            output_path: "out".into(),
            random_init: false,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.num_agents == 0 {
            return Err(Error::InvalidParams("num_agents must be positive".into()));
        }
        if self.n_c + self.n_d == 0 {
            return Err(Error::InvalidParams("problem dimension must be positive".into()));
        }
        if self.problem_kind == ProblemKind::Nonconvex && self.n_c != self.n_d {
            return Err(Error::UnequalBlocks {
                n_c: self.n_c,
                n_d: self.n_d,
            });
        }
        if self.baseline && self.problem_kind == ProblemKind::Nonconvex {
            return Err(Error::InvalidParams(
                "the ADMM baseline is only run on convex problems".into(),
            ));
        }
        Ok(())
    }
}

/// Generated agent data, serialized next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceData {
    Sensor { agents: Vec<SensorParams> },
    Quadratic { agents: Vec<QuadraticParams> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    /// Row-major.
    pub q: Vec<f64>,
    pub c: Vec<f64>,
}

pub struct GeneratedInstance {
    pub problem: ProblemInstance,
    pub data: InstanceData,
}

pub fn generate_instance(config: &RunConfig) -> Result<GeneratedInstance> {
    config.validate()?;
    let (n_c, n_d, n_agents) = (config.n_c, config.n_d, config.num_agents);
    let n = n_c + n_d;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    match config.problem_kind {
        ProblemKind::Convex | ProblemKind::Nonconvex => {
            let agents: Vec<SensorParams> = (0..n_agents)
                .map(|_| SensorParams::sample(&mut rng, n_c, n_d))
                .collect();
            let objectives = agents
                .iter()
                .map(|p| -> Result<Arc<dyn Objective>> {
                    Ok(match config.problem_kind {
                        ProblemKind::Convex => Arc::new(convex_sensor_objective(p.clone())?),
                        _ => Arc::new(nonconvex_sensor_objective(p.clone())?),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut problem = ProblemInstance::new(n_c, n_d, objectives)?;
            if problem.lipschitz_bound().is_none() {
                let l = problem
                    .objectives()
                    .iter()
                    .map(|o| estimate_lipschitz(o.as_ref(), LIPSCHITZ_BOX, LIPSCHITZ_SAMPLES, n_c))
                    .fold(0.0, f64::max);
                problem = problem.with_lipschitz_bound(l);
            }
            Ok(GeneratedInstance {
                problem,
                data: InstanceData::Sensor { agents },
            })
        }
        ProblemKind::QuadraticOracle => {
            let mut agents = Vec::with_capacity(n_agents);
            let mut objectives: Vec<Arc<dyn Objective>> = Vec::with_capacity(n_agents);
            for _ in 0..n_agents {
                let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let q = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5;
                let q = (&q + q.transpose()) * 0.5;
                let c = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                agents.push(QuadraticParams {
                    q: q.transpose().as_slice().to_vec(),
                    c: c.as_slice().to_vec(),
                });
                objectives.push(Arc::new(quadratic_objective(q, c, n_c)?));
            }
            Ok(GeneratedInstance {
                problem: ProblemInstance::new(n_c, n_d, objectives)?,
                data: InstanceData::Quadratic { agents },
            })
        }
    }
}

/// Stage I starting point and duals.
pub fn initial_point(config: &RunConfig) -> (MixedVector, Vec<DVector<f64>>) {
    let n = config.n_c + config.n_d;
    if !config.random_init {
        return (
            MixedVector::zeros(config.n_c, config.n_d),
            vec![DVector::zeros(n); config.num_agents],
        );
    }
    // Separate stream so instance draws do not depend on this flag.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut normal = || rng.sample::<f64, _>(StandardNormal);
    let z0 = MixedVector::new(DVector::from_fn(n, |_, _| normal()), config.n_c);
    let lambdas = (0..config.num_agents)
        .map(|_| DVector::from_fn(n, |_, _| normal()))
        .collect();
    (z0, lambdas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub mix_caladin_objective: f64,
    pub admm_objective: f64,
    pub admm_iterations: usize,
    pub admm_converged: bool,
}

/// Contents of `summary.json`. Field set is fixed; unknown keys are rejected on read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub problem_kind: ProblemKind,
    pub seed: u64,
    pub num_agents: usize,
    pub n_c: usize,
    pub n_d: usize,
    /// `Σ f_i` at the stage I output.
    pub relaxed_objective: f64,
    /// `Σ f_i` at the rounded stage II output.
    pub final_objective: f64,
    pub gamma_final: f64,
    pub alpha_final: f64,
    pub stage1_iterations: usize,
    pub stage1_converged: bool,
    pub stage2_inner_iterations: usize,
    pub stage2_outer_bumps: usize,
    /// Inner loops that stopped at `max_iter_inner` rather than on the step test.
    pub stage2_capped_inner_loops: usize,
    /// Rows in `trace.csv`: stage I iterations + stage II inner iterations + outer bumps.
    pub trace_rows: usize,
    pub lemma1_violations: usize,
    pub energy_violations: usize,
    pub energy_check_enforced: bool,
    pub lipschitz_estimate: Option<f64>,
    /// Whether every stage II iterate stayed inside the box the smoothness
    /// constant was sampled over. `None` when L is analytic.
    pub stage2_in_sampled_box: Option<bool>,
    pub lower_bound_holds: bool,
    pub gamma_at_inner_exit: Vec<f64>,
    pub z_star: Vec<f64>,
    pub z_rounded: Vec<f64>,
    pub comparison: Option<Comparison>,
    /// Enforced invariants that failed; a non-empty list means a failed run.
    pub violations: Vec<String>,
}

pub struct RunOutcome {
    pub config: RunConfig,
    pub instance: InstanceData,
    pub stage1: Stage1Result,
    pub stage2: Stage2Result,
    pub baseline: Option<AdmmResult>,
    pub summary: Summary,
}

impl RunOutcome {
    pub fn trace(&self) -> impl Iterator<Item = &TraceRecord> {
        self.stage1.trace.iter().chain(&self.stage2.trace)
    }

    pub fn passed(&self) -> bool {
        self.summary.violations.is_empty()
    }
}

/// Run both stages (and the baseline when configured) without touching disk.
pub fn execute(config: &RunConfig) -> Result<RunOutcome> {
    let GeneratedInstance { problem, data } = generate_instance(config)?;
    let (z0, lambda0) = initial_point(config);
    let stage1 = run_stage1(&problem, &config.params, &z0, &lambda0)?;
    let stage2 = run_stage2(&problem, &config.params, &stage1.z_star)?;
    let baseline = if config.baseline {
        Some(run_admm_projected(
            &problem,
            config.params.rho1,
            config.params.max_iter_stage1,
            ADMM_TOL,
        )?)
    } else {
        None
    };

    let convex = problem.is_convex();
    let analytic_l = problem.objectives().iter().all(|o| o.lipschitz().is_some());
    let stage2_in_sampled_box =
        (!analytic_l).then(|| stage2.trace.iter().all(|r| LIPSCHITZ_BOX.contains(&r.z)));
    let lower_bound_holds = stage1.relaxed_objective <= stage2.final_objective + LOWER_BOUND_TOL;

    let mut violations = Vec::new();
    if stage2.lemma1_violations > 0 {
        violations.push(format!("descent inequality failed {} times", stage2.lemma1_violations));
    }
    if stage2.energy_check_enforced && stage2.energy_violations > 0 {
        violations.push(format!("energy increased {} times with rho2 > L", stage2.energy_violations));
    }
    if convex && !lower_bound_holds {
        violations.push(format!(
            "relaxed objective {} exceeds final objective {}",
            stage1.relaxed_objective, stage2.final_objective
        ));
    }
    if stage2_in_sampled_box == Some(false) {
        violations.push("stage II left the box used to estimate L".into());
    }

    let summary = Summary {
        problem_kind: config.problem_kind,
        seed: config.seed,
        num_agents: config.num_agents,
        n_c: config.n_c,
        n_d: config.n_d,
        relaxed_objective: stage1.relaxed_objective,
        final_objective: stage2.final_objective,
        gamma_final: crate::types::gamma(&stage2.z_star),
        alpha_final: stage2.final_alpha,
        stage1_iterations: stage1.iterations,
        stage1_converged: stage1.converged,
        stage2_inner_iterations: stage2.inner_iterations_total,
        stage2_outer_bumps: stage2.outer_bumps,
        stage2_capped_inner_loops: stage2.capped_inner_loops,
        trace_rows: stage1.trace.len() + stage2.trace.len(),
        lemma1_violations: stage2.lemma1_violations,
        energy_violations: stage2.energy_violations,
        energy_check_enforced: stage2.energy_check_enforced,
        lipschitz_estimate: problem.lipschitz_bound(),
        stage2_in_sampled_box,
        lower_bound_holds,
        gamma_at_inner_exit: stage2.gamma_at_inner_exit.clone(),
        z_star: stage2.z_star.as_vector().as_slice().to_vec(),
        z_rounded: stage2.z_rounded.as_vector().as_slice().to_vec(),
        comparison: baseline.as_ref().map(|b| Comparison {
            mix_caladin_objective: stage2.final_objective,
            admm_objective: b.objective,
            admm_iterations: b.iterations,
            admm_converged: b.converged,
        }),
        violations,
    };

    Ok(RunOutcome {
        config: config.clone(),
        instance: data,
        stage1,
        stage2,
        baseline,
        summary,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    stage: &'a str,
    iter: usize,
    step_norm: f64,
    objective: f64,
    gamma: f64,
    alpha: f64,
    energy: Option<f64>,
}

pub fn trace_csv<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer.serialize(CsvRow {
            stage: r.stage.as_str(),
            iter: r.iter,
            step_norm: r.step_norm,
            objective: r.objective,
            gamma: r.gamma,
            alpha: r.alpha,
            energy: r.energy,
        })?;
    }
    writer.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trace.csv"), trace_csv(outcome.trace())?)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&outcome.summary)?)?;
    fs::write(
        dir.join("config.resolved.json"),
        serde_json::to_string_pretty(&outcome.config)?,
    )?;
    fs::write(dir.join("instance.json"), serde_json::to_string_pretty(&outcome.instance)?)?;
    if let Some(b) = &outcome.baseline {
        fs::write(dir.join("baseline_trace.csv"), trace_csv(&b.trace)?)?;
    }
    Ok(())
}

/// Execute and write all outputs into `config.output_path`.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    let outcome = execute(config)?;
    write_outputs(&outcome, Path::new(&config.output_path))?;
    Ok(outcome)
}

/// `‖z^k − z̃*‖²` for k = 1..=iterations of stage I, where `z̃*` is the final
/// iterate of a run twice as long. The stopping tolerance is disabled so
/// both horizons are reached unless the iteration hits an exact fixed point.
pub fn stage1_residual_curve(config: &RunConfig, iterations: usize) -> Result<Vec<f64>> {
    let GeneratedInstance { problem, .. } = generate_instance(config)?;
    let (z0, lambda0) = initial_point(config);
    let params = AlgoParams {
        max_iter_stage1: 2 * iterations,
        eps_stage1: f64::MIN_POSITIVE,
        ..config.params.clone()
    };
    let reference = run_stage1(&problem, &params, &z0, &lambda0)?;
    let z_ref = &reference.z_star;
    Ok((0..iterations)
        .map(|k| {
            // An exact fixed point ends the run early; later iterates equal the last one.
            let z = &reference.trace.get(k).unwrap_or_else(|| reference.trace.last().unwrap()).z;
            (z.as_vector() - z_ref.as_vector()).norm_squared()
        })
        .collect())
}

/// Least-squares line through `(x, y)`: returns `(slope, intercept, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_instance() {
        let config = RunConfig::default_for(ProblemKind::Convex);
        let a = generate_instance(&config).unwrap().data;
        let b = generate_instance(&config).unwrap().data;
        assert_eq!(a, b);
        let other = RunConfig {
            seed: 43,
            ..config
        };
        assert_ne!(a, generate_instance(&other).unwrap().data);
    }

    #[test]
    fn convex_handles_report_unit_smoothness() {
        let g = generate_instance(&RunConfig::default_for(ProblemKind::Convex)).unwrap();
        assert_eq!(g.problem.num_agents(), 20);
        for o in g.problem.objectives() {
            assert!(o.is_convex());
            assert_eq!(o.lipschitz(), Some(1.0));
        }
        assert_eq!(g.problem.lipschitz_bound(), Some(1.0));
    }

    #[test]
    fn nonconvex_needs_square_blocks() {
        let config = RunConfig {
            n_d: 7,
            ..RunConfig::default_for(ProblemKind::Nonconvex)
        };
        assert!(matches!(
            generate_instance(&config),
            Err(Error::UnequalBlocks { n_c: 10, n_d: 7 })
        ));
    }

    #[test]
    fn nonconvex_gets_sampled_lipschitz_bound() {
        let g = generate_instance(&RunConfig::default_for(ProblemKind::Nonconvex)).unwrap();
        let l = g.problem.lipschitz_bound().unwrap();
        assert!(l > 1.0 && l < 1e5, "{l}");
    }

    #[test]
    fn config_json_round_trip() {
        let mut config = RunConfig::default_for(ProblemKind::Nonconvex);
        config.params.eps_outer = 3.5e-7;
        config.seed = u64::MAX;
        let text = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
        assert!(serde_json::from_str::<RunConfig>(&text.replacen('{', "{\"bogus\":1,", 1)).is_err());
    }

    #[test]
    fn random_init_is_seeded() {
        let config = RunConfig {
            random_init: true,
            ..RunConfig::default_for(ProblemKind::Convex)
        };
        let (z_a, l_a) = initial_point(&config);
        let (z_b, l_b) = initial_point(&config);
        assert_eq!(z_a, z_b);
        assert_eq!(l_a, l_b);
        assert!(z_a.as_vector().norm() > 0.0);
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (slope, intercept, r2) = linear_fit(&xs, &ys);
        assert!((slope + 0.5).abs() < 1e-12);
        assert!((intercept - 3.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_leaves_stage1_energy_empty() {
        let z = MixedVector::zeros(1, 1);
        let rec = |stage, energy| TraceRecord {
            stage,
            iter: 1,
            z: z.clone(),
            step_norm: 0.5,
            objective: 2.0,
            gamma: 0.0,
            alpha: 0.0,
            energy,
        };
        let bytes = trace_csv(&[
            rec(crate::types::StageTag::Stage1, None),
            rec(crate::types::StageTag::Stage2Inner, Some(1.25)),
        ])
        .unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "stage,iter,step_norm,objective,gamma,alpha,energy");
        assert_eq!(lines[1], "stage1,1,0.5,2.0,0.0,0.0,");
        assert_eq!(lines[2], "stage2_inner,1,0.5,2.0,0.0,0.0,1.25");
    }
}
