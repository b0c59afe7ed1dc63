//! ISQ: forward Sarsa within an episode, backward Q-learning over the
//! episode memory at its end.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arm::ScenarioSpec;
use crate::sim::{sample_initial_state, step, JointAction, JointState, MetricAccumulator};

use super::tables::{
    backward_pass, sarsa_forward_update, EpisodeMemory, IndexTable, QTable, Transition,
    VisitCounter,
};
use super::{epsilon_schedule, select_actions, PolicyError, TableSnapshot, TrialResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsqConfig {
    /// Number of episodes `J`.
    pub episodes: usize,
    /// Slots per episode `T`.
    pub episode_length: usize,
    /// Learning discount.
    pub discount: f64,
    /// Constant rate of the backward pass.
    pub backward_rate: f64,
    /// `e` in `eps_t = scale * e / (e + t)`.
    pub epsilon_constant: f64,
    pub epsilon_scale: f64,
    /// Keep a copy of the tables after every backward pass.
    pub record_snapshots: bool,
}

impl Default for IsqConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            episode_length: 100,
            discount: 0.999,
            backward_rate: 0.1,
            epsilon_constant: 5.0,
            epsilon_scale: 1.0,
            record_snapshots: false,
        }
    }
}

impl IsqConfig {
    pub fn horizon(&self) -> usize {
        self.episodes * self.episode_length
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let fail = |msg: String| Err(PolicyError::Config(msg));
        if self.episodes == 0 {
            return fail("episodes must be positive".into());
        }
        if self.episode_length == 0 {
            return fail("episode_length must be positive".into());
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return fail(format!(
                "discount must lie in (0, 1), got {}",
                self.discount
            ));
        }
        if !(self.backward_rate > 0.0 && self.backward_rate < 1.0) {
            return fail(format!(
                "backward_rate must lie in (0, 1), got {}",
                self.backward_rate
            ));
        }
        if !(self.epsilon_constant > 0.0 && self.epsilon_constant.is_finite()) {
            return fail(format!(
                "epsilon_constant must be positive, got {}",
                self.epsilon_constant
            ));
        }
        if !(self.epsilon_scale > 0.0 && self.epsilon_scale.is_finite()) {
            return fail(format!(
                "epsilon_scale must be positive, got {}",
                self.epsilon_scale
            ));
        }
        Ok(())
    }

    pub fn epsilon(&self, t: usize) -> f64 {
        epsilon_schedule(self.epsilon_constant, self.epsilon_scale, t)
    }
}

struct ArmLearner {
    q: QTable,
    index: IndexTable,
    visits: VisitCounter,
    memory: EpisodeMemory,
}

fn priorities(learners: &[ArmLearner], state: &JointState) -> Vec<f64> {
    learners
        .iter()
        .zip(&state.0)
        .map(|(l, &x)| l.index.get(x))
        .collect()
}

/// Runs `J` episodes of `T` slots.
///
/// Within a slot: act, observe, pick the next joint action by epsilon-decay
/// on the indices learned so far, record the tuple, then apply the Sarsa
/// update with the chosen next action. Each episode ends with a backward
/// pass per arm. Tables, visit counts, the exploration clock and the metric
/// clock all carry over between episodes; states are resampled.
pub fn run_isq<R: Rng + ?Sized>(
    scenario: &ScenarioSpec,
    config: &IsqConfig,
    rng: &mut R,
) -> Result<TrialResult, PolicyError> {
    config.validate()?;
    let k = scenario.budget;
    let beta = config.discount;
    let mut learners: Vec<ArmLearner> = scenario
        .arms
        .iter()
        .map(|arm| ArmLearner {
            q: QTable::from_rewards(arm),
            index: IndexTable::zeros(arm.state_count),
            visits: VisitCounter::new(arm.state_count),
            memory: EpisodeMemory::new(config.episode_length),
        })
        .collect();

    let mut result = TrialResult::new("ISQ", 0, config.horizon());
    let mut metric = MetricAccumulator::new(scenario.metric_kind, scenario.discount);
    let mut clock = 0usize;

    for episode in 0..config.episodes {
        let mut state = sample_initial_state(scenario, rng);
        let mut action: JointAction = select_actions(
            &priorities(&learners, &state),
            k,
            config.epsilon(clock),
            rng,
        );

        for _ in 0..config.episode_length {
            let outcome = step(scenario, &state, &action, rng)?;
            result.record(outcome.total_reward, metric.push(outcome.total_reward));

            let next_action = select_actions(
                &priorities(&learners, &outcome.next_state),
                k,
                config.epsilon(clock + 1),
                rng,
            );
            for (n, learner) in learners.iter_mut().enumerate() {
                let tr = Transition {
                    state: state.get(n),
                    action: action.action(n),
                    reward: outcome.rewards[n],
                    next_state: outcome.next_state.get(n),
                };
                learner.memory.push(tr);
                sarsa_forward_update(
                    &mut learner.q,
                    &mut learner.visits,
                    &mut learner.index,
                    &tr,
                    next_action.action(n),
                    beta,
                );
            }
            state = outcome.next_state;
            action = next_action;
            clock += 1;
        }

        for learner in &mut learners {
            backward_pass(
                &mut learner.q,
                &mut learner.index,
                &learner.memory,
                config.backward_rate,
                beta,
            )?;
            learner.memory.clear();
        }
        if config.record_snapshots {
            result.snapshots.push(TableSnapshot {
                episode,
                q: learners.iter().map(|l| l.q.clone()).collect(),
                index: learners.iter().map(|l| l.index.clone()).collect(),
            });
        }
    }
    Ok(result)
}
