use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mixcal::harness::{execute, run_experiment, trace_csv, write_outputs, ProblemKind, RunConfig, RunOutcome};

#[derive(Parser)]
#[command(name = "mixcal", version, about = "Two-stage distributed mixed-integer consensus solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run stage I and stage II and write outputs.
    Run(RunArgs),
    /// Run with the projected ADMM baseline enabled (convex problems only).
    Compare(RunArgs),
    /// Run twice, check the traces are byte-identical and the invariants hold.
    Audit(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["convex", "nonconvex"])]
    problem: Option<String>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    nd: Option<usize>,
    #[arg(long)]
    rho1: Option<f64>,
    #[arg(long)]
    rho2: Option<f64>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps_stage1: Option<f64>,
    #[arg(long)]
    eps_inner: Option<f64>,
    #[arg(long)]
    eps_outer: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration cap for stage I (and the ADMM baseline).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Use agent Hessians in the stage II QP.
    #[arg(long)]
    accelerated: bool,
    #[arg(long)]
    baseline: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.problem) {
            (Some(path), _) => RunConfig::from_json_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            (None, Some(p)) => RunConfig::default_for(p.parse()?),
            (None, None) => RunConfig::default_for(ProblemKind::Convex),
        };
        if let (Some(_), Some(p)) = (&self.config, &self.problem) {
            cfg.problem_kind = p.parse()?;
        }
        let p = &mut cfg.params;
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set! {
            rho1 => p.rho1,
            rho2 => p.rho2,
            alpha0 => p.alpha0,
            beta => p.beta,
            eps_stage1 => p.eps_stage1,
            eps_inner => p.eps_inner,
            eps_outer => p.eps_outer,
            max_iter => p.max_iter_stage1,
        }
        if self.accelerated {
            p.accelerated = true;
        }
        set! {
            agents => cfg.num_agents,
            nc => cfg.n_c,
            nd => cfg.n_d,
            seed => cfg.seed,
        }
        if self.baseline {
            cfg.baseline = true;
        }
        if let Some(out) = &self.out {
            cfg.output_path = out.to_string_lossy().into_owned();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(outcome: &RunOutcome) {
    let s = &outcome.summary;
    println!(
        "relaxed {:.6e}  final {:.6e}  gamma {:.3e}  alpha {}  stage1 {}  inner {}  bumps {}",
        s.relaxed_objective,
        s.final_objective,
        s.gamma_final,
        s.alpha_final,
        s.stage1_iterations,
        s.stage2_inner_iterations,
        s.stage2_outer_bumps
    );
    if let Some(c) = &s.comparison {
        println!(
            "admm {:.6e} after {} iterations (converged: {})",
            c.admm_objective, c.admm_iterations, c.admm_converged
        );
    }
    for v in &s.violations {
        eprintln!("violation: {v}");
    }
}

fn audit(cfg: &RunConfig) -> Result<bool> {
    let first = execute(cfg)?;
    let second = execute(cfg)?;
    let a = trace_csv(first.trace())?;
    let b = trace_csv(second.trace())?;
    write_outputs(&first, Path::new(&cfg.output_path))?;
    fs::write(Path::new(&cfg.output_path).join("trace.rerun.csv"), &b)?;
    report(&first);
    let deterministic = a == b;
    println!("deterministic trace: {}", if deterministic { "yes" } else { "NO" });
    let s = &first.summary;
    let csv_rows = a.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    let rows_match = csv_rows == s.trace_rows
        && s.trace_rows == s.stage1_iterations + s.stage2_inner_iterations + s.stage2_outer_bumps;
    if !rows_match {
        eprintln!("trace rows do not match the reported iterations");
    }
    Ok(deterministic && rows_match && first.passed())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let outcome = run_experiment(&cfg)?;
            report(&outcome);
            Ok(outcome.passed())
        }
        Command::Compare(args) => {
            let mut cfg = args.resolve()?;
            if cfg.problem_kind != ProblemKind::Convex {
                bail!("compare needs a convex problem");
            }
            cfg.baseline = true;
            let outcome = run_experiment(&cfg)?;
            report(&outcome);
            Ok(outcome.passed())
        }
        Command::Audit(args) => audit(&args.resolve()?),
    }
}
