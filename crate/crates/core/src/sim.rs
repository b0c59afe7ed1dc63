//! Stochastic simulation of `N` coupled arms under a joint action.
//!
//! One RNG stream drives a whole trial. Within a slot, arms draw their next
//! state in arm order, one uniform variate each, so replays are exact.

use rand::Rng;
use thiserror::Error;

use crate::arm::{MetricKind, ScenarioSpec, ACTIVE, PASSIVE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("joint action activates {active} arms, budget is {budget}")]
    Budget { active: usize, budget: usize },

    #[error("joint {what} has length {len}, scenario has {arms} arms")]
    Length {
        what: &'static str,
        len: usize,
        arms: usize,
    },

    #[error("arm {arm} is in state {state}, outside 0..{states}")]
    StateRange {
        arm: usize,
        state: usize,
        states: usize,
    },
}

/// Per-arm current states.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointState(pub Vec<usize>);

impl JointState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, arm: usize) -> usize {
        self.0[arm]
    }
}

/// Per-arm activation flags; exactly `K` are set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction(pub Vec<bool>);

impl JointAction {
    /// Activates exactly the listed arms.
    pub fn from_active(n_arms: usize, active: impl IntoIterator<Item = usize>) -> Self {
        let mut flags = vec![false; n_arms];
        for arm in active {
            flags[arm] = true;
        }
        Self(flags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Action index (`PASSIVE` or `ACTIVE`) of one arm.
    pub fn action(&self, arm: usize) -> usize {
        if self.0[arm] {
            ACTIVE
        } else {
            PASSIVE
        }
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    pub fn active_arms(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(n, _)| n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: JointState,
    pub rewards: Vec<f64>,
    pub total_reward: f64,
}

/// Draws an index from a discrete distribution given one uniform variate.
///
/// Falls back to the last positive entry when rounding leaves `u` past the
/// cumulative sum.
pub fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (v, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = v;
            if u < acc {
                return v;
            }
        }
    }
    last
}

fn check_shapes(
    scenario: &ScenarioSpec,
    state: &JointState,
    action: &JointAction,
) -> Result<(), SimError> {
    let arms = scenario.n_arms();
    if state.len() != arms {
        return Err(SimError::Length {
            what: "state",
            len: state.len(),
            arms,
        });
    }
    if action.len() != arms {
        return Err(SimError::Length {
            what: "action",
            len: action.len(),
            arms,
        });
    }
    for (arm, (&x, model)) in state.0.iter().zip(&scenario.arms).enumerate() {
        if x >= model.state_count {
            return Err(SimError::StateRange {
                arm,
                state: x,
                states: model.state_count,
            });
        }
    }
    let active = action.active_count();
    if active != scenario.budget {
        return Err(SimError::Budget {
            active,
            budget: scenario.budget,
        });
    }
    Ok(())
}

/// Advances every arm by one slot.
pub fn step<R: Rng + ?Sized>(
    scenario: &ScenarioSpec,
    state: &JointState,
    action: &JointAction,
    rng: &mut R,
) -> Result<StepOutcome, SimError> {
    check_shapes(scenario, state, action)?;
    let mut next = Vec::with_capacity(state.len());
    let mut rewards = Vec::with_capacity(state.len());
    for (arm, model) in scenario.arms.iter().enumerate() {
        let x = state.get(arm);
        let a = action.action(arm);
        rewards.push(model.reward(x, a));
        let u: f64 = rng.gen();
        next.push(sample_row(model.kernel(a).row(x), u));
    }
    let total_reward = rewards.iter().sum();
    Ok(StepOutcome {
        next_state: JointState(next),
        rewards,
        total_reward,
    })
}

/// Independent uniform initial state per arm.
pub fn sample_initial_state<R: Rng + ?Sized>(scenario: &ScenarioSpec, rng: &mut R) -> JointState {
    JointState(
        scenario
            .arms
            .iter()
            .map(|arm| rng.gen_range(0..arm.state_count))
            .collect(),
    )
}

/// Folds one slot's reward into the running metric.
///
/// `t` is the global slot index: the discount clock and the averaging
/// window never reset at episode boundaries.
pub fn accumulate_metric(
    kind: MetricKind,
    running: f64,
    slot_reward: f64,
    t: usize,
    discount: f64,
) -> f64 {
    match kind {
        MetricKind::DiscountedCumulative => running + discount.powf(t as f64) * slot_reward,
        MetricKind::TimeAverage => running + (slot_reward - running) / (t as f64 + 1.0),
    }
}

/// Running metric over a reward stream, with the discount weight tracked
/// incrementally.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    kind: MetricKind,
    discount: f64,
    weight: f64,
    value: f64,
    slots: usize,
}

impl MetricAccumulator {
    pub fn new(kind: MetricKind, discount: f64) -> Self {
        Self {
            kind,
            discount,
            weight: 1.0,
            value: 0.0,
            slots: 0,
        }
    }

    pub fn push(&mut self, slot_reward: f64) -> f64 {
        self.value = match self.kind {
            MetricKind::DiscountedCumulative => self.value + self.weight * slot_reward,
            MetricKind::TimeAverage => accumulate_metric(
                self.kind,
                self.value,
                slot_reward,
                self.slots,
                self.discount,
            ),
        };
        self.weight *= self.discount;
        self.slots += 1;
        self.value
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Outcome series of a fixed-policy rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub outcomes: Vec<StepOutcome>,
    pub metric: Vec<f64>,
}

impl Rollout {
    pub fn rewards(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.total_reward).collect()
    }
}

/// Runs a stationary policy from a sampled initial state.
pub fn rollout_fixed_policy<R, P>(
    scenario: &ScenarioSpec,
    mut policy: P,
    horizon: usize,
    rng: &mut R,
) -> Result<Rollout, SimError>
where
    R: Rng + ?Sized,
    P: FnMut(&JointState) -> JointAction,
{
    let mut state = sample_initial_state(scenario, rng);
    let mut acc = MetricAccumulator::new(scenario.metric_kind, scenario.discount);
    let mut outcomes = Vec::with_capacity(horizon);
    let mut metric = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let action = policy(&state);
        let outcome = step(scenario, &state, &action, rng)?;
        metric.push(acc.push(outcome.total_reward));
        state = outcome.next_state.clone();
        outcomes.push(outcome);
    }
    Ok(Rollout { outcomes, metric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{
        circulant_arm, make_circulant_scenario, make_homogeneous_target_scenario, ArmModel,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn nt_state_active_reward_is_penalty() {
        let s = make_homogeneous_target_scenario(2, 1, 0.999).unwrap();
        let mut r = rng(1);
        for _ in 0..50 {
            let out = step(
                &s,
                &JointState(vec![3, 0]),
                &JointAction(vec![true, false]),
                &mut r,
            )
            .unwrap();
            assert_eq!(out.rewards, vec![-1.0, 0.5]);
            assert_eq!(out.total_reward, -0.5);
        }
    }

    #[test]
    fn unit_row_is_deterministic() {
        let arm = ArmModel::new(
            [[0.0, 1.0], [1.0, 0.0]],
            [[0.0, 1.0], [0.0, 1.0]],
            vec![[0.0, 1.0], [2.0, 3.0]],
        )
        .unwrap();
        let s = ScenarioSpec {
            arms: vec![arm; 2],
            budget: 1,
            discount: 0.9,
            metric_kind: MetricKind::DiscountedCumulative,
        };
        let mut r = rng(3);
        for _ in 0..100 {
            let out = step(
                &s,
                &JointState(vec![0, 1]),
                &JointAction(vec![false, true]),
                &mut r,
            )
            .unwrap();
            assert_eq!(out.next_state, JointState(vec![1, 1]));
        }
    }

    #[test]
    fn sample_row_handles_rounding() {
        assert_eq!(sample_row(&[0.5, 0.0, 0.0, 0.5], 0.999_999_999_999), 3);
        assert_eq!(sample_row(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(sample_row(&[0.3, 0.7, 0.0], 1.0), 1);
    }

    #[test]
    fn budget_violation_is_rejected() {
        let s = make_circulant_scenario(3, 1).unwrap();
        let err = step(
            &s,
            &JointState(vec![0, 0, 0]),
            &JointAction(vec![true, true, false]),
            &mut rng(0),
        )
        .unwrap_err();
        assert_eq!(
            err,
            SimError::Budget {
                active: 2,
                budget: 1
            }
        );
        assert!(matches!(
            step(
                &s,
                &JointState(vec![0, 0]),
                &JointAction(vec![true, false, false]),
                &mut rng(0)
            ),
            Err(SimError::Length { what: "state", .. })
        ));
        assert!(matches!(
            step(
                &s,
                &JointState(vec![0, 9, 0]),
                &JointAction(vec![true, false, false]),
                &mut rng(0)
            ),
            Err(SimError::StateRange { arm: 1, .. })
        ));
    }

    #[test]
    fn circulant_passive_frequencies() {
        let s = ScenarioSpec {
            arms: vec![circulant_arm(); 2],
            budget: 1,
            discount: 0.9,
            metric_kind: MetricKind::TimeAverage,
        };
        let mut r = rng(11);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let out = step(
                &s,
                &JointState(vec![0, 0]),
                &JointAction(vec![false, true]),
                &mut r,
            )
            .unwrap();
            counts[out.next_state.get(0)] += 1;
        }
        let expected = [0.5, 0.0, 0.0, 0.5];
        for (c, e) in counts.iter().zip(expected) {
            assert!((*c as f64 / n as f64 - e).abs() < 0.01);
        }
    }

    #[test]
    fn initial_state_is_uniform_and_seeded() {
        let s = make_circulant_scenario(5, 1).unwrap();
        let a = sample_initial_state(&s, &mut rng(4));
        assert_eq!(a.len(), 5);
        assert_eq!(a, sample_initial_state(&s, &mut rng(4)));

        let mut r = rng(5);
        let mut counts = [0usize; 4];
        let draws = 100_000 / 5;
        for _ in 0..draws {
            for x in sample_initial_state(&s, &mut r).0 {
                counts[x] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / (draws * 5) as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn metric_arithmetic() {
        let d = MetricKind::DiscountedCumulative;
        assert_eq!(accumulate_metric(d, 0.0, 2.0, 0, 0.999), 2.0);
        assert_eq!(accumulate_metric(d, 2.0, 2.0, 1, 0.5), 3.0);

        let mut m = 0.0;
        for (t, r) in [1.0, 0.0, 1.0].into_iter().enumerate() {
            m = accumulate_metric(MetricKind::TimeAverage, m, r, t, 0.9);
        }
        assert!((m - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accumulator_matches_closed_form() {
        let rewards = [1.0, -2.0, 0.5, 3.0, 0.25];
        let mut acc = MetricAccumulator::new(MetricKind::DiscountedCumulative, 0.9);
        let mut running = 0.0;
        for (t, &r) in rewards.iter().enumerate() {
            running = accumulate_metric(MetricKind::DiscountedCumulative, running, r, t, 0.9);
            assert!((acc.push(r) - running).abs() < 1e-12);
        }
        assert!((acc.value() - running).abs() < 1e-12);
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let s = make_circulant_scenario(3, 1).unwrap();
        let policy = |_: &JointState| JointAction::from_active(3, [0]);
        let one = rollout_fixed_policy(&s, policy, 1, &mut rng(0)).unwrap();
        assert_eq!(one.outcomes.len(), 1);
        assert_eq!(one.metric.len(), 1);

        let a = rollout_fixed_policy(&s, policy, 200, &mut rng(9)).unwrap();
        let b = rollout_fixed_policy(&s, policy, 200, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        for o in &a.outcomes {
            assert_eq!(o.total_reward, o.rewards.iter().sum::<f64>());
        }
    }
}
