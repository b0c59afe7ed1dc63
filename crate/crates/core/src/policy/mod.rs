//! Schedulers: ISQ, WIQL, Greedy and the Whittle-index oracle.
//!
//! All four pick `K` arms per slot by ranking per-arm priorities at the
//! current states. The learned ones explore with probability `eps_t`,
//! choosing `K` arms uniformly without replacement.
//!
//! Ties in the ranking go to the lowest arm id.

mod baselines;
mod isq;
pub mod tables;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::ScenarioSpec;
use crate::sim::{JointAction, SimError};
use crate::whittle::SolverError;

pub use baselines::{run_greedy, run_wi_oracle, run_wiql, wiql_epsilon, OracleIndices};
pub use isq::{run_isq, IsqConfig};
pub use tables::{
    backward_pass, q_learning_update, sarsa_forward_update, EpisodeMemory, IndexTable, QTable,
    Transition, VisitCounter,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("episode memory holds {found} tuples, expected {expected}")]
    IncompleteMemory { expected: usize, found: usize },

    #[error("invalid policy configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// `scale * e / (e + t)`, clamped to `(0, 1]`.
pub fn epsilon_schedule(constant: f64, scale: f64, t: usize) -> f64 {
    let eps = scale * constant / (constant + t as f64);
    eps.clamp(f64::MIN_POSITIVE, 1.0)
}

/// Indices of the `k` largest priorities; ties favor the lower arm id.
pub fn top_k(priorities: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..priorities.len()).collect();
    order.sort_by(|&a, &b| priorities[b].total_cmp(&priorities[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Epsilon-greedy top-`k` selection.
///
/// One uniform variate decides between exploring and exploiting; exploring
/// draws `k` distinct arms uniformly.
pub fn select_actions<R: Rng + ?Sized>(
    priorities: &[f64],
    k: usize,
    epsilon: f64,
    rng: &mut R,
) -> JointAction {
    let n = priorities.len();
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        JointAction::from_active(n, sample(rng, n, k))
    } else {
        JointAction::from_active(n, top_k(priorities, k))
    }
}

/// Per-episode snapshot of the learned tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSnapshot {
    pub episode: usize,
    pub q: Vec<QTable>,
    pub index: Vec<IndexTable>,
}

/// One seeded run of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub policy: String,
    pub seed: u64,
    /// Total reward of each slot.
    pub rewards: Vec<f64>,
    /// Running metric after each slot.
    pub metric: Vec<f64>,
    pub final_metric: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<TableSnapshot>,
}

impl TrialResult {
    pub(crate) fn new(policy: &str, seed: u64, horizon: usize) -> Self {
        Self {
            policy: policy.to_string(),
            seed,
            rewards: Vec::with_capacity(horizon),
            metric: Vec::with_capacity(horizon),
            final_metric: 0.0,
            snapshots: Vec::new(),
        }
    }

    pub(crate) fn record(&mut self, reward: f64, metric: f64) {
        self.rewards.push(reward);
        self.metric.push(metric);
        self.final_metric = metric;
    }
}

/// Which scheduler to run, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PolicySpec {
    Isq(IsqConfig),
    Wiql,
    Greedy,
    #[serde(rename = "wi")]
    WiOracle,
}

impl PolicySpec {
    pub fn label(&self) -> &'static str {
        match self {
            PolicySpec::Isq(_) => "ISQ",
            PolicySpec::Wiql => "WIQL",
            PolicySpec::Greedy => "Greedy",
            PolicySpec::WiOracle => "WI",
        }
    }
}

/// Runs one trial of `spec`. The oracle needs precomputed indices.
pub fn run_policy<R: Rng + ?Sized>(
    scenario: &ScenarioSpec,
    spec: &PolicySpec,
    horizon: usize,
    oracle: Option<&OracleIndices>,
    seed: u64,
    rng: &mut R,
) -> Result<TrialResult, PolicyError> {
    let mut result = match spec {
        PolicySpec::Isq(cfg) => {
            if cfg.horizon() != horizon {
                return Err(PolicyError::Config(format!(
                    "ISQ runs {} episodes of {} slots = {} slots, horizon is {horizon}",
                    cfg.episodes,
                    cfg.episode_length,
                    cfg.horizon()
                )));
            }
            run_isq(scenario, cfg, rng)?
        }
        PolicySpec::Wiql => run_wiql(scenario, horizon, rng)?,
        PolicySpec::Greedy => run_greedy(scenario, horizon, rng)?,
        PolicySpec::WiOracle => {
            let owned;
            let indices = match oracle {
                Some(o) => o,
                None => {
                    owned = OracleIndices::compute(scenario, crate::whittle::DEFAULT_TOL)?;
                    &owned
                }
            };
            run_wi_oracle(scenario, horizon, rng, indices)?
        }
    };
    result.seed = seed;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_values() {
        assert_eq!(epsilon_schedule(5.0, 1.0, 0), 1.0);
        assert_eq!(epsilon_schedule(5.0, 1.0, 5), 0.5);
        assert_eq!(epsilon_schedule(5.0, 0.5, 0), 0.5);
        assert!(epsilon_schedule(1.0, 1.0, usize::MAX) > 0.0);
        assert_eq!(epsilon_schedule(5.0, 3.0, 0), 1.0);
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = select_actions(&[3.0, 1.0, 2.0], 1, 0.0, &mut rng);
        assert_eq!(a, JointAction(vec![true, false, false]));
        let a = select_actions(&[2.0, 2.0, 1.0], 1, 0.0, &mut rng);
        assert_eq!(a, JointAction(vec![true, false, false]));
        assert_eq!(top_k(&[1.0, 5.0, 5.0, 0.0, 5.0], 2), vec![1, 2]);
        assert_eq!(top_k(&[0.0; 4], 3), vec![0, 1, 2]);
    }

    #[test]
    fn uniform_exploration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let a = select_actions(&[9.0, 0.0, 0.0], 1, 1.0, &mut rng);
            assert_eq!(a.active_count(), 1);
            for n in a.active_arms() {
                counts[n] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn exploration_picks_distinct_arms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(
                select_actions(&[0.0; 10], 4, 1.0, &mut rng).active_count(),
                4
            );
        }
    }

    #[test]
    fn policy_spec_json_tags() {
        let specs = vec![
            PolicySpec::Isq(IsqConfig::default()),
            PolicySpec::Wiql,
            PolicySpec::Greedy,
            PolicySpec::WiOracle,
        ];
        let text = serde_json::to_string(&specs).unwrap();
        assert!(text.contains(r#""name":"wi""#));
        assert!(text.contains(r#""name":"isq""#));
        let back: Vec<PolicySpec> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, specs);
    }
}
