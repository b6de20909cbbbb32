//! `mtdsense`: command-line front end for sensor placement under a
//! moving-target defense. Exit codes: 0 success, 1 invalid model or
//! allocation, 2 solver failure, 3 I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mtd_sensors::alloc::{
    allocate_detectors, allocate_stealthy, build_step1_milp, build_step2_milp, AllocError,
};
use mtd_sensors::milp::export_lp_file;
use mtd_sensors::model::{
    load_model, validate_allocation, ModelBundle, ModelError, SensorAllocation,
};
use mtd_sensors::product::{apply_detectors, apply_stealthy, build_base_mdp, ProductMdp};
use mtd_sensors::sim::{simulate, DEFAULT_MAX_STEPS};
use mtd_sensors::ssp::{
    extract_policy, solve_ssp_lp, value_iteration, StateRelevanceWeights, StochasticPolicy,
    ValueVector, VI_MAX_ITER, VI_TOL,
};

#[derive(Parser)]
#[command(name = "mtdsense", version, about = "Joint sensor placement against attackers facing a moving-target defense")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a model, and optionally an allocation against it.
    Validate {
        model: PathBuf,
        /// Allocation JSON ({"x": [[state, config, action], ...], "y": [...]}).
        #[arg(long)]
        allocation: Option<PathBuf>,
    },
    /// Build the product MDP and dump it in Graphviz DOT format.
    Product {
        model: PathBuf,
        #[arg(long)]
        allocation: Option<PathBuf>,
        /// Output path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the attacker's reachability values on the (instrumented) MDP.
    Solve {
        model: PathBuf,
        #[arg(long)]
        allocation: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Method::Lp)]
        method: Method,
        /// Value-iteration convergence tolerance.
        #[arg(long, default_value_t = VI_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize detector and stealthy-sensor placements.
    Allocate {
        model: PathBuf,
        /// Detector budget per configuration (model default if omitted).
        #[arg(short)]
        k: Option<u32>,
        /// Stealthy-sensor budget per configuration (model default if omitted).
        #[arg(short = 'H', long)]
        h: Option<u32>,
        /// Override the uniform detector false-negative rate.
        #[arg(long)]
        eps: Option<f64>,
        /// Softmax temperature for the induced attack policy.
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo rollouts of the induced attack policy.
    Simulate {
        model: PathBuf,
        #[arg(long)]
        allocation: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve allocations over a grid of budgets and write a CSV.
    Sweep {
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        k_max: u32,
        #[arg(long, default_value_t = 1)]
        h_max: u32,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        /// Also simulate each placement with this many trials.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a placement MILP in CPLEX-LP format for external solvers.
    ExportLp {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Stage::Detectors)]
        stage: Stage,
        /// Detector allocation the stealthy stage builds on.
        #[arg(long)]
        allocation: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        mu: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Lp,
    Vi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Detectors,
    Stealthy,
}

struct AppError {
    code: u8,
    msg: String,
}

impl AppError {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        AppError { code, msg: msg.into() }
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Io(_) => 3,
            _ => 1,
        };
        AppError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::new(3, e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        AppError::new(1, e.to_string())
    }
}

impl From<mtd_sensors::product::ProductError> for AppError {
    fn from(e: mtd_sensors::product::ProductError) -> Self {
        AppError::new(1, e.to_string())
    }
}

impl From<mtd_sensors::ssp::SspError> for AppError {
    fn from(e: mtd_sensors::ssp::SspError) -> Self {
        AppError::new(2, e.to_string())
    }
}

impl From<mtd_sensors::sim::SimError> for AppError {
    fn from(e: mtd_sensors::sim::SimError) -> Self {
        AppError::new(2, e.to_string())
    }
}

impl From<AllocError> for AppError {
    fn from(e: AllocError) -> Self {
        let code = match e {
            AllocError::Infeasible(_) => 1,
            _ => 2,
        };
        AppError::new(code, e.to_string())
    }
}

fn load_allocation(path: &Option<PathBuf>) -> Result<SensorAllocation, AppError> {
    match path {
        None => Ok(SensorAllocation::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

/// Loads an allocation and rejects it if it violates the model's constraints.
fn load_checked_allocation(
    bundle: &ModelBundle,
    path: &Option<PathBuf>,
) -> Result<SensorAllocation, AppError> {
    let alloc = load_allocation(path)?;
    let violations = validate_allocation(bundle, &alloc);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(AppError::new(1, format!("invalid allocation:\n  {}", msgs.join("\n  "))));
    }
    Ok(alloc)
}

fn instrumented_mdp(
    bundle: &ModelBundle,
    alloc: &SensorAllocation,
) -> Result<ProductMdp, AppError> {
    let base = build_base_mdp(bundle);
    let with_x = apply_detectors(&base, &alloc.x, &bundle.fn_model)?;
    Ok(apply_stealthy(&with_x, &alloc.y)?)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), AppError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = writeln!(stdout, "{text}") {
                // A closed pipe (e.g. piping into `head`) is not an error.
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn values_json(mdp: &ProductMdp, v: &ValueVector) -> serde_json::Value {
    json!({
        "values": v.to_named(mdp),
        "initial_value": mdp.initial_value(&v.values),
    })
}

/// Attack policy the defender anticipates: optimal against the detectors,
/// blind to the stealthy sensors.
fn induced_policy(
    bundle: &ModelBundle,
    alloc: &SensorAllocation,
    mu: f64,
) -> Result<(ProductMdp, StochasticPolicy), AppError> {
    let base = build_base_mdp(bundle);
    let mdp_x = apply_detectors(&base, &alloc.x, &bundle.fn_model)?;
    let v = value_iteration(&mdp_x, VI_TOL, VI_MAX_ITER)?;
    let pi = extract_policy(&mdp_x, &v, mu)?;
    Ok((mdp_x, pi))
}

fn apply_overrides(
    mut bundle: ModelBundle,
    k: Option<u32>,
    h: Option<u32>,
    eps: Option<f64>,
) -> Result<ModelBundle, AppError> {
    if let Some(k) = k {
        bundle = bundle.with_detector_budget(k);
    }
    if let Some(h) = h {
        bundle = bundle.with_stealthy_budget(h);
    }
    if let Some(eps) = eps {
        if !(0.0..=1.0).contains(&eps) {
            return Err(AppError::new(1, format!("--eps {eps} is outside [0, 1]")));
        }
        bundle = bundle.with_uniform_eps(eps);
    }
    Ok(bundle)
}

fn solve_joint(
    bundle: &ModelBundle,
    mu: f64,
) -> Result<(mtd_sensors::alloc::DetectorAllocResult, mtd_sensors::alloc::StealthyAllocResult), AppError> {
    let det = allocate_detectors(bundle)?;
    let ste = allocate_stealthy(bundle, &det, mu)?;
    Ok((det, ste))
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Validate { model, allocation } => {
            let bundle = load_model(&model)?;
            load_checked_allocation(&bundle, &allocation)?;
            println!(
                "ok: {} states, {} actions, {} configurations",
                bundle.states().len(),
                bundle.actions().len(),
                bundle.schedule.configs.len()
            );
            Ok(())
        }
        Command::Product { model, allocation, out } => {
            let bundle = load_model(&model)?;
            let alloc = load_checked_allocation(&bundle, &allocation)?;
            let mdp = instrumented_mdp(&bundle, &alloc)?;
            emit(&out, &mdp.to_dot())
        }
        Command::Solve { model, allocation, method, tol, out } => {
            let bundle = load_model(&model)?;
            let alloc = load_checked_allocation(&bundle, &allocation)?;
            let mdp = instrumented_mdp(&bundle, &alloc)?;
            let v = match method {
                Method::Lp => solve_ssp_lp(&mdp, &StateRelevanceWeights::from_initial(&mdp))?,
                Method::Vi => value_iteration(&mdp, tol, VI_MAX_ITER)?,
            };
            emit(&out, &serde_json::to_string_pretty(&values_json(&mdp, &v))?)
        }
        Command::Allocate { model, k, h, eps, mu, out } => {
            let bundle = apply_overrides(load_model(&model)?, k, h, eps)?;
            let (det, ste) = solve_joint(&bundle, mu)?;
            let base = build_base_mdp(&bundle);
            let mdp_xy = instrumented_mdp(
                &bundle,
                &SensorAllocation { x: det.x.clone(), y: ste.y.clone() },
            )?;
            let report = json!({
                "allocation": SensorAllocation { x: det.x.clone(), y: ste.y.clone() },
                "detector_budget": bundle.constraints.detector_budget,
                "stealthy_budget": bundle.constraints.stealthy_budget,
                "false_negative_default": bundle.fn_model.default_rate,
                "mu": mu,
                "attacker_value_V2": det.attacker_value,
                "defender_value_V1": ste.defender_value,
                "attacker_values": det.values.to_named(&base),
                "defender_values": ste.values.to_named(&mdp_xy),
                "step1_stats": det.stats,
                "step2_stats": ste.stats,
            });
            emit(&out, &serde_json::to_string_pretty(&report)?)
        }
        Command::Simulate { model, allocation, mu, trials, seed, max_steps, out } => {
            let bundle = load_model(&model)?;
            let alloc = load_checked_allocation(&bundle, &allocation)?;
            let (mdp_x, pi) = induced_policy(&bundle, &alloc, mu)?;
            let mdp_xy = apply_stealthy(&mdp_x, &alloc.y)?;
            let report = simulate(&mdp_xy, &pi, trials, seed, max_steps)?;
            let exact = mtd_sensors::ssp::evaluate_policy(&mdp_xy, &pi)?;
            let doc = json!({
                "report": report,
                "predicted_success_rate": mdp_xy.initial_value(&exact.values),
            });
            emit(&out, &serde_json::to_string_pretty(&doc)?)
        }
        Command::Sweep { model, k_max, h_max, eps, mu, trials, seed, out } => {
            let bundle = apply_overrides(load_model(&model)?, None, None, eps)?;
            let mut csv = String::from(
                "k,h,eps,attacker_value_V2,defender_value_V1,milp_time_step1,milp_time_step2",
            );
            if trials.is_some() {
                csv.push_str(",empirical_rate,stderr");
            }
            csv.push('\n');
            for k in 0..=k_max {
                for h in 0..=h_max {
                    let b = bundle.clone().with_detector_budget(k).with_stealthy_budget(h);
                    let (det, ste) = solve_joint(&b, mu)?;
                    csv.push_str(&format!(
                        "{k},{h},{},{:.9},{:.9},{:.4},{:.4}",
                        b.fn_model.default_rate,
                        det.attacker_value,
                        ste.defender_value,
                        det.stats.wall_time_secs,
                        ste.stats.wall_time_secs,
                    ));
                    if let Some(n) = trials {
                        let alloc = SensorAllocation { x: det.x.clone(), y: ste.y.clone() };
                        let (mdp_x, pi) = induced_policy(&b, &alloc, mu)?;
                        let mdp_xy = apply_stealthy(&mdp_x, &alloc.y)?;
                        let rep = simulate(&mdp_xy, &pi, n, seed, DEFAULT_MAX_STEPS)?;
                        csv.push_str(&format!(
                            ",{:.6},{:.6}",
                            rep.empirical_success_rate, rep.stderr
                        ));
                    }
                    csv.push('\n');
                }
            }
            std::fs::write(&out, csv)?;
            Ok(())
        }
        Command::ExportLp { model, stage, allocation, mu, out } => {
            let bundle = load_model(&model)?;
            let mdp = build_base_mdp(&bundle);
            let c = StateRelevanceWeights::from_initial(&mdp);
            let milp_model = match stage {
                Stage::Detectors => build_step1_milp(&mdp, &bundle, &c).model,
                Stage::Stealthy => {
                    let alloc = load_checked_allocation(&bundle, &allocation)?;
                    let (mdp_x, pi) = induced_policy(&bundle, &alloc, mu)?;
                    build_step2_milp(&mdp_x, &bundle, &pi, &c).model
                }
            };
            export_lp_file(&milp_model, &out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("MTDSENSE_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
