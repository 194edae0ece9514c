//! Command-line front end.
//!
//! Every subcommand reads at most one JSON file and writes one report,
//! to `--out` or standard output. Reports are deterministic functions of
//! their inputs; `RISKALLOC_THREADS` only changes how fast they appear.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::certify::gap_study;
use crate::dual::{recover_primal, solve_dual, InnerMethod, Multipliers};
use crate::error::{Error, Result};
use crate::generate::{generate, Family};
use crate::mixing::{mix_policies, random_grid_policy, TestDensityFamily};
use crate::model::{InstanceConfig, Policy};
use crate::probability::ScenarioSet;
use crate::risk::{envelope_gamma, lower_evaluate, upper_evaluate, RiskSpec};
use crate::rng;

pub const THREADS_ENV: &str = "RISKALLOC_THREADS";
pub const MIX_HEADER: &str = "alpha,m,epsilon,subset_size";
pub const RISK_HEADER: &str = "risk,upper,lower,gamma";

#[derive(Debug, Parser)]
#[command(name = "riskalloc", version, about = "Risk-constrained resource allocation: dual solver and duality-gap experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the dual, recover a primal point, print a JSON summary.
    Solve(SolveArgs),
    /// Duality gap across scenario refinement levels, as CSV.
    GapStudy(GapArgs),
    /// Upper and lower risk evaluations of a supplied sample, as CSV.
    RiskEval(RiskEvalArgs),
    /// Time-sharing deficits of two seeded random policies, as CSV.
    MixDemo(MixArgs),
    /// Write a seeded instance configuration.
    Generate(GenerateArgs),
}

/// Overrides shared by the instance-driven subcommands.
#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Instance configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Experiment seed; replaces both the instance and solver seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub method: Option<InnerMethod>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Refinement factor of the recovered policy; the solver setting when omitted.
    #[arg(long)]
    pub refine: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GapArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub levels: Vec<usize>,
    /// Write measured wall-clock times instead of zeros.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RiskEvalArgs {
    /// JSON file `{"sample": {"weights": [..], "values": [..]}, "risks": [..]}`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MixArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub levels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long, default_value_t = 8)]
    pub scenarios: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Input of `risk-eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskEvalInput {
    pub sample: Sample,
    pub risks: Vec<RiskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
}

/// Output of `solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub dual: f64,
    pub primal: f64,
    pub gap_abs: f64,
    pub feasible: bool,
    pub min_slack: f64,
    pub x: Vec<f64>,
    pub policy: Vec<Vec<f64>>,
    pub refine_factor: usize,
    pub multipliers: Multipliers,
    pub best_iter: usize,
    pub iterations: usize,
    pub distinct_policies: usize,
    pub method: InnerMethod,
    pub exact: bool,
    pub seed: u64,
}

fn load_instance(o: &Overrides) -> Result<InstanceConfig> {
    let mut config = InstanceConfig::load(&o.config)?;
    if let Some(seed) = o.seed {
        config.seed = seed;
        config.dual.seed = seed;
    }
    if let Some(method) = o.method {
        config.dual.method = method;
    }
    if let Some(n) = o.max_iters {
        config.dual.max_iters = n;
    }
    config.dual.validate()?;
    Ok(config)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn solve(args: &SolveArgs) -> Result<String> {
    let config = load_instance(&args.common)?;
    let inst = config.build()?;
    let result = solve_dual(&inst, &config.dual)?;
    let m = args.refine.unwrap_or(config.dual.refine_factor);
    let cand = recover_primal(&inst, &result, m, config.dual.tol)?;
    let primal = if cand.feasible { cand.value } else { f64::NEG_INFINITY };
    to_json(&SolveSummary {
        dual: result.best_dual,
        primal: cand.value,
        gap_abs: result.best_dual - primal,
        feasible: cand.feasible,
        min_slack: cand.min_slack,
        x: cand.x,
        policy: cand.policy.rows().to_vec(),
        refine_factor: cand.refine_factor,
        multipliers: result.best_multipliers,
        best_iter: result.best_iter,
        iterations: result.trace.len(),
        distinct_policies: result.choices.len(),
        method: result.method,
        exact: result.exact,
        seed: config.dual.seed,
    })
}

fn gap(args: &GapArgs) -> Result<String> {
    let config = load_instance(&args.common)?;
    let inst = config.build()?;
    Ok(gap_study(&inst, &args.levels, &config.dual)?.to_csv(args.timings))
}

/// Comma-free name of a risk measure for CSV output.
fn label(risk: &RiskSpec) -> String {
    match risk {
        RiskSpec::Expectation => "expectation".into(),
        RiskSpec::Cvar { beta } => format!("cvar(beta={beta})"),
        RiskSpec::Mad { lambda } => format!("mad(lambda={lambda})"),
        RiskSpec::MeanCvar { theta, beta } => format!("mean_cvar(theta={theta};beta={beta})"),
        RiskSpec::BoxMean { .. } => "box_mean".into(),
    }
}

fn risk_eval(args: &RiskEvalArgs) -> Result<String> {
    let text = fs::read_to_string(&args.config).map_err(|e| Error::Io(format!("{}: {e}", args.config.display())))?;
    let input: RiskEvalInput = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
    let n = input.sample.weights.len();
    let s = ScenarioSet::new((0..n).map(|k| vec![k as f64]).collect(), input.sample.weights)?;
    let mut out = format!("{RISK_HEADER}\n");
    for risk in &input.risks {
        risk.validate_on(&s)?;
        out.push_str(&format!(
            "{},{},{},{}\n",
            label(risk),
            upper_evaluate(risk, &s, &input.sample.values)?,
            lower_evaluate(risk, &s, &input.sample.values)?,
            envelope_gamma(risk),
        ));
    }
    Ok(out)
}

fn mix_demo(args: &MixArgs) -> Result<String> {
    let config = load_instance(&args.common)?;
    let inst = config.build()?;
    crate::certify::check_levels(&args.levels)?;
    let mut r = rng::stream(config.seed, "mix-demo");
    let p: Policy = inst.choice_policy(&random_grid_policy(&inst, &mut r));
    let q: Policy = inst.choice_policy(&random_grid_policy(&inst, &mut r));
    let family = TestDensityFamily::standard(&inst, &p, &q, config.seed)?;
    let mut out = format!("{MIX_HEADER}\n");
    for &alpha in &args.alphas {
        for &m in &args.levels {
            let mix = mix_policies(&inst, &p, &q, alpha, m, &family)?;
            out.push_str(&format!("{alpha},{m},{},{}\n", mix.epsilon, mix.set.len()));
        }
    }
    Ok(out)
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(Error::Schema(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
            Ok(n) => Ok(Some(n)),
        },
    }
}

fn execute(command: &Command) -> Result<()> {
    let (text, out) = match command {
        Command::Solve(a) => (solve(a)?, a.common.out.as_deref()),
        Command::GapStudy(a) => (gap(a)?, a.common.out.as_deref()),
        Command::RiskEval(a) => (risk_eval(a)?, a.out.as_deref()),
        Command::MixDemo(a) => (mix_demo(a)?, a.common.out.as_deref()),
        Command::Generate(a) => (generate(a.family, a.scenarios, a.seed)?.to_json()?, a.out.as_deref()),
    };
    emit(out, &text)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = thread_count().and_then(|threads| match threads {
        None => execute(&cli.command),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Schema(e.to_string()))?
            .install(|| execute(&cli.command)),
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("riskalloc: {e}");
            e.exit_code()
        }
    }
}
