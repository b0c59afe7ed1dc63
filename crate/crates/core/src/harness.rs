//! Experiment orchestration: scenario and policy configuration, seeded
//! multi-trial runs, aggregation, and CSV/JSON output.
//!
//! Every `(policy, trial)` cell owns a ChaCha stream seeded with
//! `base_seed + trial` on a stream id derived from the policy name, so the
//! curves of one policy do not depend on which other policies run alongside.

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{
    make_circulant_scenario, make_heterogeneous_target_scenario, make_homogeneous_target_scenario,
    ScenarioError, ScenarioSpec,
};
use crate::policy::{run_policy, IsqConfig, OracleIndices, PolicyError, PolicySpec, TrialResult};
use crate::whittle::{linear_grid, subsidy_bracket, IndexabilityReport, SolverError, DEFAULT_TOL};

/// Episodes used when neither a horizon nor an episode count is given.
pub const DEFAULT_EPISODES: usize = 200;
/// Slots per episode used when not given.
pub const DEFAULT_EPISODE_LENGTH: usize = 100;
/// Exploration constant for the target scenarios.
pub const TARGET_EPSILON_CONSTANT: f64 = 5.0;
/// Exploration scale for the circulant scenario, whose constant is `N`.
pub const CIRCULANT_EPSILON_SCALE: f64 = 0.5;
/// Seed of the heterogeneous generator when none is given.
pub const DEFAULT_SCENARIO_SEED: u64 = 7;

const AUDIT_POINTS: usize = 41;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("scenario: {0}")]
    Scenario(#[from] ScenarioError),

    #[error("cannot parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Policy(#[from] PolicyError),

    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl HarnessError {
    fn config(field: &str, message: impl Into<String>) -> Self {
        HarnessError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the input.
    pub fn is_numeric(&self) -> bool {
        match self {
            HarnessError::Solver(e) | HarnessError::Policy(PolicyError::Solver(e)) => {
                !matches!(e, SolverError::InvalidInput(_))
            }
            HarnessError::Policy(p) => !matches!(p, PolicyError::Config(_)),
            _ => false,
        }
    }
}

/// Which scenario to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioSelector {
    Circulant {
        n: usize,
        k: usize,
        /// Overrides the preset discount.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
    Homogeneous {
        n: usize,
        k: usize,
        beta: f64,
    },
    Heterogeneous {
        n: usize,
        k: usize,
        beta: f64,
        #[serde(default = "default_scenario_seed")]
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

fn default_scenario_seed() -> u64 {
    DEFAULT_SCENARIO_SEED
}

impl ScenarioSelector {
    pub fn build(&self) -> Result<ScenarioSpec, HarnessError> {
        let scenario = match *self {
            ScenarioSelector::Circulant { n, k, beta } => {
                let mut s = make_circulant_scenario(n, k)?;
                if let Some(beta) = beta {
                    s.discount = beta;
                    s.validate()?;
                }
                s
            }
            ScenarioSelector::Homogeneous { n, k, beta } => {
                make_homogeneous_target_scenario(n, k, beta)?
            }
            ScenarioSelector::Heterogeneous { n, k, beta, seed } => {
                make_heterogeneous_target_scenario(n, k, beta, seed)?
            }
            ScenarioSelector::File { ref path } => load_scenario(path)?,
        };
        Ok(scenario)
    }
}

/// Reads and validates a scenario document.
pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let scenario = ScenarioSpec::from_json(&text).map_err(|source| HarnessError::Parse {
        what: path.display().to_string(),
        source,
    })?;
    scenario.validate()?;
    Ok(scenario)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Isq,
    Wiql,
    Greedy,
    Wi,
}

impl PolicyName {
    pub const ALL: [PolicyName; 4] = [
        PolicyName::Wi,
        PolicyName::Isq,
        PolicyName::Wiql,
        PolicyName::Greedy,
    ];

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "isq" => Some(PolicyName::Isq),
            "wiql" => Some(PolicyName::Wiql),
            "greedy" => Some(PolicyName::Greedy),
            "wi" | "oracle" => Some(PolicyName::Wi),
            _ => None,
        }
    }
}

/// ISQ hyperparameters. Unset exploration parameters default to
/// `e = N`, scale `1/2` on the circulant scenario and `e = 5`, scale 1
/// elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsqParams {
    pub backward_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_constant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_scale: Option<f64>,
    /// Learning discount; the scenario discount when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
}

impl Default for IsqParams {
    fn default() -> Self {
        Self {
            backward_rate: IsqConfig::default().backward_rate,
            epsilon_constant: None,
            epsilon_scale: None,
            discount: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSelector,
    #[serde(default = "all_policies")]
    pub policies: Vec<PolicyName>,
    #[serde(default)]
    pub isq: IsqParams,
    /// Total slots; must equal `episodes * episode_length` when both are set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_length: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Where outputs go; not echoed into the summary.
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

fn all_policies() -> Vec<PolicyName> {
    PolicyName::ALL.to_vec()
}

fn default_trials() -> usize {
    20
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioSelector) -> Self {
        Self {
            scenario,
            policies: all_policies(),
            isq: IsqParams::default(),
            horizon: None,
            episodes: None,
            episode_length: None,
            trials: default_trials(),
            base_seed: 0,
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|source| HarnessError::Parse {
            what: "experiment config".into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Parse {
            what: path.display().to_string(),
            source,
        })
    }

    /// Episode count and length, filling gaps from the horizon or defaults.
    pub fn episode_structure(&self) -> Result<(usize, usize), HarnessError> {
        let (j, t) = match (self.horizon, self.episodes, self.episode_length) {
            (_, Some(j), Some(t)) => (j, t),
            (Some(h), Some(j), None) => {
                if j == 0 || h % j != 0 {
                    return Err(HarnessError::config(
                        "episodes",
                        format!("{j} episodes do not divide horizon {h}"),
                    ));
                }
                (j, h / j)
            }
            (Some(h), None, t) => {
                let t = t.unwrap_or(DEFAULT_EPISODE_LENGTH.min(h.max(1)));
                if t == 0 || h % t != 0 {
                    return Err(HarnessError::config(
                        "horizon",
                        format!("horizon {h} is not a multiple of episode_length {t}"),
                    ));
                }
                (h / t, t)
            }
            (None, j, t) => (
                j.unwrap_or(DEFAULT_EPISODES),
                t.unwrap_or(DEFAULT_EPISODE_LENGTH),
            ),
        };
        if j == 0 {
            return Err(HarnessError::config("episodes", "must be at least 1"));
        }
        if t == 0 {
            return Err(HarnessError::config("episode_length", "must be at least 1"));
        }
        if let Some(h) = self.horizon {
            if h != j * t {
                return Err(HarnessError::config(
                    "horizon",
                    format!("{h} differs from episodes * episode_length = {}", j * t),
                ));
            }
        }
        Ok((j, t))
    }

    /// Validates the configuration and builds everything a run needs.
    pub fn resolve(&self) -> Result<ResolvedExperiment, HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::config("trials", "must be at least 1"));
        }
        if self.policies.is_empty() {
            return Err(HarnessError::config("policies", "list is empty"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                return Err(HarnessError::config(
                    "policies",
                    format!("{p:?} is listed twice"),
                ));
            }
        }
        let scenario = self.scenario.build()?;
        let (episodes, episode_length) = self.episode_structure()?;
        let (e_default, scale_default) = match self.scenario {
            ScenarioSelector::Circulant { .. } => {
                (scenario.n_arms() as f64, CIRCULANT_EPSILON_SCALE)
            }
            _ => (TARGET_EPSILON_CONSTANT, 1.0),
        };
        let isq = IsqConfig {
            episodes,
            episode_length,
            discount: self.isq.discount.unwrap_or(scenario.discount),
            backward_rate: self.isq.backward_rate,
            epsilon_constant: self.isq.epsilon_constant.unwrap_or(e_default),
            epsilon_scale: self.isq.epsilon_scale.unwrap_or(scale_default),
            record_snapshots: false,
        };
        isq.validate().map_err(|e| match e {
            PolicyError::Config(m) => HarnessError::config("isq", m),
            other => other.into(),
        })?;

        let policies = self
            .policies
            .iter()
            .map(|p| match p {
                PolicyName::Isq => PolicySpec::Isq(isq.clone()),
                PolicyName::Wiql => PolicySpec::Wiql,
                PolicyName::Greedy => PolicySpec::Greedy,
                PolicyName::Wi => PolicySpec::WiOracle,
            })
            .collect();
        Ok(ResolvedExperiment {
            scenario,
            policies,
            horizon: episodes * episode_length,
            trials: self.trials,
            base_seed: self.base_seed,
        })
    }
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExperiment {
    pub scenario: ScenarioSpec,
    pub policies: Vec<PolicySpec>,
    pub horizon: usize,
    pub trials: usize,
    pub base_seed: u64,
}

/// FNV-1a, used to give each policy its own ChaCha stream.
pub fn stream_id(policy: &str) -> u64 {
    policy.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// RNG of one `(policy, trial)` cell.
pub fn trial_rng(policy: &str, base_seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(trial as u64));
    rng.set_stream(stream_id(policy));
    rng
}

/// Mean and spread of one policy over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: String,
    pub mean_curve: Vec<f64>,
    pub std_curve: Vec<f64>,
    pub finals: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
}

/// `100 (a - b) / |b|` of one policy's final mean over another's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub policy: String,
    pub baseline: String,
    /// `None` when the baseline's final mean is zero.
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub horizon: usize,
    pub trials: usize,
    pub policies: Vec<PolicyAggregate>,
    pub improvements: Vec<Improvement>,
}

impl AggregateResult {
    pub fn get(&self, policy: &str) -> Option<&PolicyAggregate> {
        self.policies.iter().find(|p| p.policy == policy)
    }

    pub fn improvement(&self, policy: &str, baseline: &str) -> Option<f64> {
        self.improvements
            .iter()
            .find(|i| i.policy == policy && i.baseline == baseline)
            .and_then(|i| i.percent)
    }
}

/// `100 (a - b) / |b|`.
pub fn percentage_improvement(a: f64, b: f64) -> Result<f64, HarnessError> {
    if b == 0.0 || !b.is_finite() || !a.is_finite() {
        return Err(HarnessError::config(
            "baseline",
            format!("percentage improvement needs a finite nonzero baseline, got {b}"),
        ));
    }
    Ok(100.0 * (a - b) / b.abs())
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Per-slot mean and sample standard deviation over trials.
pub fn aggregate(policy: &str, trials: &[TrialResult]) -> PolicyAggregate {
    let horizon = trials[0].metric.len();
    let (mut mean_curve, mut std_curve) =
        (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
    for t in 0..horizon {
        let (m, s) = mean_std(trials.iter().map(|r| r.metric[t]));
        mean_curve.push(m);
        std_curve.push(s);
    }
    let finals: Vec<f64> = trials.iter().map(|r| r.final_metric).collect();
    let (final_mean, final_std) = mean_std(finals.iter().copied());
    PolicyAggregate {
        policy: policy.to_string(),
        mean_curve,
        std_curve,
        finals,
        final_mean,
        final_std,
    }
}

/// Audit grid spanning the bisection bracket of every distinct arm.
fn oracle_grid(scenario: &ScenarioSpec) -> Vec<f64> {
    let half = scenario
        .arms
        .iter()
        .map(|a| subsidy_bracket(a, scenario.discount).1)
        .fold(0.0, f64::max);
    linear_grid(-half, half, AUDIT_POINTS)
}

/// Runs every trial of every policy and returns the raw results.
pub fn run_trials(exp: &ResolvedExperiment) -> Result<Vec<Vec<TrialResult>>, HarnessError> {
    let oracle = if exp.policies.contains(&PolicySpec::WiOracle) {
        Some(OracleIndices::compute_audited(
            &exp.scenario,
            DEFAULT_TOL,
            &oracle_grid(&exp.scenario),
        )?)
    } else {
        None
    };
    let cells: Vec<(usize, usize)> = (0..exp.policies.len())
        .flat_map(|p| (0..exp.trials).map(move |t| (p, t)))
        .collect();
    let results: Vec<TrialResult> = cells
        .par_iter()
        .map(|&(p, trial)| {
            let spec = &exp.policies[p];
            let mut rng = trial_rng(spec.label(), exp.base_seed, trial);
            let seed = exp.base_seed.wrapping_add(trial as u64);
            run_policy(
                &exp.scenario,
                spec,
                exp.horizon,
                oracle.as_ref(),
                seed,
                &mut rng,
            )
        })
        .collect::<Result<_, _>>()?;
    let mut grouped: Vec<Vec<TrialResult>> =
        vec![Vec::with_capacity(exp.trials); exp.policies.len()];
    for ((p, _), r) in cells.into_iter().zip(results) {
        grouped[p].push(r);
    }
    Ok(grouped)
}

/// Aggregates grouped trial results, one group per policy.
pub fn aggregate_all(exp: &ResolvedExperiment, grouped: &[Vec<TrialResult>]) -> AggregateResult {
    let policies: Vec<PolicyAggregate> = exp
        .policies
        .iter()
        .zip(grouped)
        .map(|(spec, trials)| aggregate(spec.label(), trials))
        .collect();
    let mut improvements = Vec::new();
    for a in &policies {
        for b in &policies {
            if a.policy != b.policy {
                improvements.push(Improvement {
                    policy: a.policy.clone(),
                    baseline: b.policy.clone(),
                    percent: percentage_improvement(a.final_mean, b.final_mean).ok(),
                });
            }
        }
    }
    AggregateResult {
        horizon: exp.horizon,
        trials: exp.trials,
        policies,
        improvements,
    }
}

/// Validates, runs and aggregates; writes outputs when `out_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateResult, HarnessError> {
    let exp = config.resolve()?;
    let grouped = run_trials(&exp)?;
    let result = aggregate_all(&exp, &grouped);
    if let Some(dir) = &config.out_dir {
        emit_curves(&result, config, dir)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalStats {
    pub mean: f64,
    pub std: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub horizon: usize,
    pub trials: usize,
    pub policies: Vec<(String, FinalStats)>,
    pub improvements: Vec<Improvement>,
}

pub fn read_summary(path: &Path) -> Result<ExperimentSummary, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Parse {
        what: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(path, e))
}

/// Writes `<policy>.csv` (`t,mean_metric,std_metric`, one row per slot) for
/// each policy and `summary.json` into `dir`.
pub fn emit_curves(
    result: &AggregateResult,
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    if result.policies.is_empty() {
        return Err(HarnessError::config("policies", "no results to write"));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    for p in &result.policies {
        let mut csv = String::from("t,mean_metric,std_metric\n");
        for (t, (m, s)) in p.mean_curve.iter().zip(&p.std_curve).enumerate() {
            csv.push_str(&format!("{t},{m},{s}\n"));
        }
        let path = dir.join(format!("{}.csv", p.policy));
        write_file(&path, csv.as_bytes())?;
        written.push(path);
    }
    let summary = ExperimentSummary {
        config: config.clone(),
        horizon: result.horizon,
        trials: result.trials,
        policies: result
            .policies
            .iter()
            .map(|p| {
                (
                    p.policy.clone(),
                    FinalStats {
                        mean: p.final_mean,
                        std: p.final_std,
                    },
                )
            })
            .collect(),
        improvements: result.improvements.clone(),
    };
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexabilitySidecar {
    pub verdict: crate::whittle::Verdict,
    pub strongly_indexable: bool,
    pub whittle_index: Option<Vec<f64>>,
}

/// Writes the report's curves as `lambda,D_0,...` to `path` and the verdict
/// to the same path with a `.json` extension.
pub fn emit_indexability(
    report: &IndexabilityReport,
    path: &Path,
) -> Result<PathBuf, HarnessError> {
    if report.d_curves.iter().any(|c| c.len() != report.grid.len()) {
        return Err(HarnessError::config(
            "report",
            "curve lengths differ from the grid",
        ));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let mut csv = String::from("lambda");
    for x in 0..report.d_curves.len() {
        csv.push_str(&format!(",D_{x}"));
    }
    csv.push('\n');
    for (i, lambda) in report.grid.iter().enumerate() {
        csv.push_str(&lambda.to_string());
        for curve in &report.d_curves {
            csv.push_str(&format!(",{}", curve[i]));
        }
        csv.push('\n');
    }
    write_file(path, csv.as_bytes())?;

    let sidecar = IndexabilitySidecar {
        verdict: report.verdict,
        strongly_indexable: report.strongly_indexable,
        whittle_index: report.whittle_index.clone(),
    };
    let side = path.with_extension("json");
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    write_file(&side, text.as_bytes())?;
    Ok(side)
}
