//! Command-line front end: `run`, `whittle` and `validate`.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for numeric
//! failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use isq_core::harness::{
    emit_indexability, load_scenario, run_experiment, ExperimentConfig, HarnessError, PolicyName,
    ScenarioSelector, DEFAULT_SCENARIO_SEED,
};
use isq_core::whittle::{audit_strong_indexability, linear_grid, whittle_index, DEFAULT_TOL};

#[derive(Parser)]
#[command(
    name = "isq",
    version,
    about = "Restless-bandit radar scheduling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-trial experiment and write curves and a summary.
    Run(RunArgs),
    /// Print the Whittle indices and the strong-indexability audit of one arm.
    Whittle(WhittleArgs),
    /// Check a scenario file.
    Validate { path: PathBuf },
}

#[derive(Args)]
struct ScenarioArgs {
    /// circulant, homogeneous, heterogeneous, or a path to a scenario file.
    #[arg(long, default_value = "homogeneous")]
    scenario: String,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Discount; the preset's own for circulant when omitted.
    #[arg(long)]
    beta: Option<f64>,
    /// Seed of the heterogeneous generator.
    #[arg(long, default_value_t = DEFAULT_SCENARIO_SEED)]
    scenario_seed: u64,
}

impl ScenarioArgs {
    fn selector(&self) -> ScenarioSelector {
        let (n, k) = (self.n, self.k);
        let beta = self.beta.unwrap_or(0.999);
        match self.scenario.as_str() {
            "circulant" => ScenarioSelector::Circulant {
                n,
                k,
                beta: self.beta,
            },
            "homogeneous" => ScenarioSelector::Homogeneous { n, k, beta },
            "heterogeneous" => ScenarioSelector::Heterogeneous {
                n,
                k,
                beta,
                seed: self.scenario_seed,
            },
            path => ScenarioSelector::File { path: path.into() },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated subset of wi,isq,wiql,greedy.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    episode_len: Option<usize>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    epsilon_e: Option<f64>,
    #[arg(long)]
    epsilon_scale: Option<f64>,
    #[arg(long)]
    backward_rate: Option<f64>,
}

#[derive(Args)]
struct WhittleArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Which arm of the scenario to analyze.
    #[arg(long, default_value_t = 0)]
    arm: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    grid_lo: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    grid_hi: f64,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    /// Write the D curves as CSV here, with a JSON verdict alongside.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config_error(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn run(args: RunArgs) -> Result<(), HarnessError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(args.scenario.selector()),
    };
    if let Some(list) = &args.policies {
        config.policies = list
            .iter()
            .map(|p| {
                PolicyName::parse(p)
                    .ok_or_else(|| config_error("policies", format!("unknown policy `{p}`")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if args.horizon.is_some() || args.episodes.is_some() || args.episode_len.is_some() {
        config.horizon = args.horizon.or(config.horizon);
        config.episodes = args.episodes.or(config.episodes);
        config.episode_length = args.episode_len.or(config.episode_length);
    }
    if let Some(s) = args.seed {
        config.base_seed = s;
    }
    if let Some(e) = args.epsilon_e {
        config.isq.epsilon_constant = Some(e);
    }
    if let Some(s) = args.epsilon_scale {
        config.isq.epsilon_scale = Some(s);
    }
    if let Some(r) = args.backward_rate {
        config.isq.backward_rate = r;
    }
    config.out_dir = Some(args.out.clone());

    let result = run_experiment(&config)?;
    println!("horizon {}  trials {}", result.horizon, result.trials);
    for p in &result.policies {
        println!(
            "{:8} final {:>14.6}  std {:>12.6}",
            p.policy, p.final_mean, p.final_std
        );
    }
    if let Some(pct) = result.improvement("ISQ", "WIQL") {
        println!("ISQ over WIQL: {pct:+.3}%");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn whittle(args: WhittleArgs) -> Result<(), HarnessError> {
    let scenario = args.scenario.selector().build()?;
    let arm = scenario.arms.get(args.arm).ok_or_else(|| {
        config_error(
            "arm",
            format!(
                "scenario has {} arms, asked for {}",
                scenario.n_arms(),
                args.arm
            ),
        )
    })?;
    if args.grid_lo.is_nan()
        || args.grid_hi.is_nan()
        || args.grid_hi <= args.grid_lo
        || args.grid_points < 3
    {
        return Err(config_error(
            "grid",
            "need grid_lo < grid_hi and at least 3 points",
        ));
    }
    let beta = scenario.discount;
    let indices = whittle_index(arm, beta, args.tol)?;
    println!("discount {beta}");
    for (x, l) in indices.iter().enumerate() {
        println!("index[{x}] = {l:.6}");
    }
    let grid = linear_grid(args.grid_lo, args.grid_hi, args.grid_points);
    let report = audit_strong_indexability(arm, beta, &grid)?;
    println!(
        "audit on [{}, {}] with {} points: {:?} (strongly indexable: {})",
        args.grid_lo, args.grid_hi, args.grid_points, report.verdict, report.strongly_indexable
    );
    if let Some(path) = &args.out {
        emit_indexability(&report, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn validate(path: PathBuf) -> Result<(), HarnessError> {
    let s = load_scenario(&path)?;
    println!(
        "ok: {} arms, budget {}, discount {}, metric {:?}",
        s.n_arms(),
        s.budget,
        s.discount,
        s.metric_kind
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Whittle(args) => whittle(args),
        Command::Validate { path } => validate(path),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
