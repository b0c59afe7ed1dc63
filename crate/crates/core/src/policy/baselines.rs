//! WIQL, Greedy and the Whittle-index oracle.

use rand::Rng;

use crate::arm::{ArmModel, ScenarioSpec, ACTIVE, PASSIVE};
use crate::sim::{sample_initial_state, step, JointAction, MetricAccumulator};
use crate::whittle::{audit_strong_indexability, whittle_index, SolverError, Verdict};

use super::tables::{q_learning_update, IndexTable, QTable, Transition, VisitCounter};
use super::{epsilon_schedule, select_actions, top_k, PolicyError, TrialResult};

/// `N / (N + t)`.
pub fn wiql_epsilon(n_arms: usize, t: usize) -> f64 {
    epsilon_schedule(n_arms as f64, 1.0, t)
}

/// Per-slot Q-learning with harmonic per-pair rates and the Q difference
/// as index. Every arm learns from its own transition each slot.
pub fn run_wiql<R: Rng + ?Sized>(
    scenario: &ScenarioSpec,
    horizon: usize,
    rng: &mut R,
) -> Result<TrialResult, PolicyError> {
    let n = scenario.n_arms();
    let beta = scenario.discount;
    let mut q: Vec<QTable> = scenario.arms.iter().map(QTable::from_rewards).collect();
    let mut index: Vec<IndexTable> = scenario
        .arms
        .iter()
        .map(|a| IndexTable::zeros(a.state_count))
        .collect();
    let mut visits: Vec<VisitCounter> = scenario
        .arms
        .iter()
        .map(|a| VisitCounter::new(a.state_count))
        .collect();

    let mut result = TrialResult::new("WIQL", 0, horizon);
    let mut metric = MetricAccumulator::new(scenario.metric_kind, scenario.discount);
    let mut state = sample_initial_state(scenario, rng);
    for t in 0..horizon {
        let priorities: Vec<f64> = index.iter().zip(&state.0).map(|(i, &x)| i.get(x)).collect();
        let action = select_actions(&priorities, scenario.budget, wiql_epsilon(n, t), rng);
        let outcome = step(scenario, &state, &action, rng)?;
        result.record(outcome.total_reward, metric.push(outcome.total_reward));
        for arm in 0..n {
            let tr = Transition {
                state: state.get(arm),
                action: action.action(arm),
                reward: outcome.rewards[arm],
                next_state: outcome.next_state.get(arm),
            };
            let rate = visits[arm].take_rate(tr.state, tr.action);
            q_learning_update(&mut q[arm], &mut index[arm], &tr, rate, beta);
        }
        state = outcome.next_state;
    }
    Ok(result)
}

/// Myopic gap `R(x, 1) - R(x, 0)`.
pub fn reward_gap(arm: &ArmModel, state: usize) -> f64 {
    arm.reward(state, ACTIVE) - arm.reward(state, PASSIVE)
}

/// Activates the arms with the largest immediate reward gap.
pub fn run_greedy<R: Rng + ?Sized>(
    scenario: &ScenarioSpec,
    horizon: usize,
    rng: &mut R,
) -> Result<TrialResult, PolicyError> {
    let priority = |arm: usize, x: usize| reward_gap(&scenario.arms[arm], x);
    run_static_priority(scenario, horizon, rng, "Greedy", priority)
}

fn run_static_priority<R, F>(
    scenario: &ScenarioSpec,
    horizon: usize,
    rng: &mut R,
    name: &str,
    priority: F,
) -> Result<TrialResult, PolicyError>
where
    R: Rng + ?Sized,
    F: Fn(usize, usize) -> f64,
{
    let n = scenario.n_arms();
    let mut result = TrialResult::new(name, 0, horizon);
    let mut metric = MetricAccumulator::new(scenario.metric_kind, scenario.discount);
    let mut state = sample_initial_state(scenario, rng);
    for _ in 0..horizon {
        let priorities: Vec<f64> = (0..n).map(|arm| priority(arm, state.get(arm))).collect();
        let action = JointAction::from_active(n, top_k(&priorities, scenario.budget));
        let outcome = step(scenario, &state, &action, rng)?;
        result.record(outcome.total_reward, metric.push(outcome.total_reward));
        state = outcome.next_state;
    }
    Ok(result)
}

/// Exact Whittle indices for every arm of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleIndices {
    pub per_arm: Vec<Vec<f64>>,
}

impl OracleIndices {
    /// Bisection per distinct arm; identical arms share one solve.
    pub fn compute(scenario: &ScenarioSpec, tol: f64) -> Result<Self, SolverError> {
        Self::build(scenario, |arm| whittle_index(arm, scenario.discount, tol))
    }

    /// As [`compute`](Self::compute), after auditing each distinct arm on
    /// `grid`. An arm whose curves are not strictly decreasing is rejected;
    /// inconclusive plateaus are accepted.
    pub fn compute_audited(
        scenario: &ScenarioSpec,
        tol: f64,
        grid: &[f64],
    ) -> Result<Self, SolverError> {
        Self::build(scenario, |arm| {
            let report = audit_strong_indexability(arm, scenario.discount, grid)?;
            if report.verdict == Verdict::NotStronglyIndexable {
                let state = report
                    .d_curves
                    .iter()
                    .position(|c| c.windows(2).any(|w| w[1] > w[0]))
                    .unwrap_or(0);
                return Err(SolverError::AuditFailure {
                    state,
                    lambda: grid[0],
                });
            }
            whittle_index(arm, scenario.discount, tol)
        })
    }

    fn build<F>(scenario: &ScenarioSpec, mut solve: F) -> Result<Self, SolverError>
    where
        F: FnMut(&ArmModel) -> Result<Vec<f64>, SolverError>,
    {
        let mut solved: Vec<(&ArmModel, Vec<f64>)> = Vec::new();
        let mut per_arm = Vec::with_capacity(scenario.n_arms());
        for arm in &scenario.arms {
            let idx = match solved.iter().find(|(a, _)| *a == arm) {
                Some((_, idx)) => idx.clone(),
                None => {
                    let idx = solve(arm)?;
                    solved.push((arm, idx.clone()));
                    idx
                }
            };
            per_arm.push(idx);
        }
        Ok(Self { per_arm })
    }

    pub fn get(&self, arm: usize, state: usize) -> f64 {
        self.per_arm[arm][state]
    }
}

/// Top-`K` by exact Whittle index, no exploration.
pub fn run_wi_oracle<R: Rng + ?Sized>(
    scenario: &ScenarioSpec,
    horizon: usize,
    rng: &mut R,
    indices: &OracleIndices,
) -> Result<TrialResult, PolicyError> {
    if indices.per_arm.len() != scenario.n_arms() {
        return Err(PolicyError::Config(format!(
            "oracle holds indices for {} arms, scenario has {}",
            indices.per_arm.len(),
            scenario.n_arms()
        )));
    }
    run_static_priority(scenario, horizon, rng, "WI", |arm, x| indices.get(arm, x))
}
