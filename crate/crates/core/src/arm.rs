//! Finite-state two-action arm models and the scenario presets.
//!
//! An arm is one target's MDP: a passive kernel (a = 0), an active kernel
//! (a = 1) and an `S x 2` reward table. Kernels are dense row-major `S x S`
//! matrices with entry `(q, v) = P(next = v | cur = q, a)`.
//!
//! States are ordered by how maneuverable the target is: `0` is the calm
//! constant-velocity mode and `S - 1` the "not detected" mode.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Passive action index (tracked by a passive radar).
pub const PASSIVE: usize = 0;
/// Active action index (tracked by an active radar).
pub const ACTIVE: usize = 1;

/// Tolerance on kernel row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Discount used by presets that report a time-average metric. The index
/// oracle and the learners still need a discount for those scenarios.
pub const TIME_AVERAGE_DISCOUNT: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Passive,
    Active,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Passive => f.write_str("kernel_passive"),
            KernelKind::Active => f.write_str("kernel_active"),
        }
    }
}

/// First invariant an [`ArmModel`] violates.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("state_count must be at least 2, got {0}")]
    StateCount(usize),

    #[error(
        "{field}: expected {expected} rows of length {expected}, found shape mismatch at row {row}"
    )]
    Shape {
        field: &'static str,
        expected: usize,
        row: usize,
    },

    #[error("{kernel} row {row} sums to {sum} (expected 1 within {ROW_SUM_TOL:e})")]
    RowSum {
        kernel: KernelKind,
        row: usize,
        sum: f64,
    },

    #[error("{kernel} entry ({row}, {col}) = {value} is outside [0, 1]")]
    Range {
        kernel: KernelKind,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("reward ({state}, {action}) is not finite")]
    NonFiniteReward { state: usize, action: usize },
}

/// Errors raised by scenario construction and validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("arm {arm}: {violation}")]
    Arm { arm: usize, violation: Violation },

    #[error("budget must satisfy 0 < budget < arms ({arms}), got {budget}")]
    Budget { budget: usize, arms: usize },

    #[error("discount must lie in (0, 1), got {0}")]
    Discount(f64),

    #[error("scenario has no arms")]
    NoArms,
}

/// Dense row-major square stochastic matrix.
///
/// Serialized as nested arrays (one inner array per row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Kernel {
    size: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.data[q * self.size..(q + 1) * self.size]
    }

    pub fn get(&self, q: usize, v: usize) -> f64 {
        self.data[q * self.size + v]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.size.max(1))
    }

    /// Expected value of `values` at the next state, starting from `q`.
    pub fn expect(&self, q: usize, values: &[f64]) -> f64 {
        self.row(q).iter().zip(values).map(|(p, v)| p * v).sum()
    }

    fn check(&self, kind: KernelKind) -> Result<(), Violation> {
        for (q, row) in self.rows().enumerate() {
            for (v, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Violation::Range {
                        kernel: kind,
                        row: q,
                        col: v,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Violation::RowSum {
                    kernel: kind,
                    row: q,
                    sum,
                });
            }
        }
        Ok(())
    }
}

/// Error for a nested array that is not square.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("kernel is not square: row {row} has length {len}, expected {expected}")]
pub struct NotSquare {
    pub row: usize,
    pub len: usize,
    pub expected: usize,
}

impl TryFrom<Vec<Vec<f64>>> for Kernel {
    type Error = NotSquare;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        let size = rows.len();
        let mut data = Vec::with_capacity(size * size);
        for (row, r) in rows.into_iter().enumerate() {
            if r.len() != size {
                return Err(NotSquare {
                    row,
                    len: r.len(),
                    expected: size,
                });
            }
            data.extend(r);
        }
        Ok(Self { size, data })
    }
}

impl From<Kernel> for Vec<Vec<f64>> {
    fn from(k: Kernel) -> Self {
        k.rows().map(<[f64]>::to_vec).collect()
    }
}

impl<const S: usize> From<[[f64; S]; S]> for Kernel {
    fn from(rows: [[f64; S]; S]) -> Self {
        Self {
            size: S,
            data: rows.iter().flatten().copied().collect(),
        }
    }
}

/// One target's finite MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub state_count: usize,
    pub kernel_passive: Kernel,
    pub kernel_active: Kernel,
    /// `reward[x][a]`.
    pub reward: Vec<[f64; 2]>,
}

impl ArmModel {
    /// Builds an arm and checks every invariant.
    pub fn new(
        kernel_passive: impl Into<Kernel>,
        kernel_active: impl Into<Kernel>,
        reward: Vec<[f64; 2]>,
    ) -> Result<Self, Violation> {
        let arm = Self {
            state_count: reward.len(),
            kernel_passive: kernel_passive.into(),
            kernel_active: kernel_active.into(),
            reward,
        };
        arm.validate()?;
        Ok(arm)
    }

    pub fn kernel(&self, action: usize) -> &Kernel {
        if action == ACTIVE {
            &self.kernel_active
        } else {
            &self.kernel_passive
        }
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward[state][action]
    }

    /// Largest absolute reward in the table.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward
            .iter()
            .flatten()
            .fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// Returns the first violated invariant, checking shape, then range,
    /// then row sums, then rewards.
    pub fn validate(&self) -> Result<(), Violation> {
        let s = self.state_count;
        if s < 2 {
            return Err(Violation::StateCount(s));
        }
        for (field, kernel) in [
            ("kernel_passive", &self.kernel_passive),
            ("kernel_active", &self.kernel_active),
        ] {
            if kernel.size != s || kernel.data.len() != s * s {
                return Err(Violation::Shape {
                    field,
                    expected: s,
                    row: kernel.size.min(s),
                });
            }
        }
        if self.reward.len() != s {
            return Err(Violation::Shape {
                field: "reward",
                expected: s,
                row: self.reward.len().min(s),
            });
        }
        self.kernel_passive.check(KernelKind::Passive)?;
        self.kernel_active.check(KernelKind::Active)?;
        for (x, r) in self.reward.iter().enumerate() {
            for (a, v) in r.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Violation::NonFiniteReward {
                        state: x,
                        action: a,
                    });
                }
            }
        }
        Ok(())
    }
}

/// How a trial's reward stream is summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    TimeAverage,
    DiscountedCumulative,
}

/// A full restless-bandit instance: `N` arms, `K` active radars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub arms: Vec<ArmModel>,
    pub budget: usize,
    pub discount: f64,
    pub metric_kind: MetricKind,
}

impl ScenarioSpec {
    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.arms.is_empty() {
            return Err(ScenarioError::NoArms);
        }
        for (arm, model) in self.arms.iter().enumerate() {
            model
                .validate()
                .map_err(|violation| ScenarioError::Arm { arm, violation })?;
        }
        check_budget(self.arms.len(), self.budget)?;
        check_discount(self.discount)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization is infallible")
    }
}

fn check_budget(arms: usize, budget: usize) -> Result<(), ScenarioError> {
    if budget == 0 || budget >= arms {
        return Err(ScenarioError::Budget { budget, arms });
    }
    Ok(())
}

fn check_discount(discount: f64) -> Result<(), ScenarioError> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(ScenarioError::Discount(discount));
    }
    Ok(())
}

/// The 4-state circulant arm: rewards -1, 0, 0, 1 regardless of action.
pub fn circulant_arm() -> ArmModel {
    ArmModel::new(
        [
            [0.5, 0.0, 0.0, 0.5],
            [0.5, 0.5, 0.0, 0.0],
            [0.0, 0.5, 0.5, 0.0],
            [0.0, 0.0, 0.5, 0.5],
        ],
        [
            [0.5, 0.5, 0.0, 0.0],
            [0.0, 0.5, 0.5, 0.0],
            [0.0, 0.0, 0.5, 0.5],
            [0.5, 0.0, 0.0, 0.5],
        ],
        vec![[-1.0, -1.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0]],
    )
    .expect("circulant preset is valid")
}

/// Reward table shared by every smart-target arm (states CV, CA, CT, NT).
pub fn target_reward() -> Vec<[f64; 2]> {
    vec![[0.5, 2.0], [0.3, 1.5], [0.1, 1.0], [0.0, -1.0]]
}

/// The homogeneous smart-target arm.
pub fn homogeneous_target_arm() -> ArmModel {
    ArmModel::new(
        [
            [0.8, 0.2, 0.0, 0.0],
            [0.3, 0.7, 0.0, 0.0],
            [0.0, 0.3, 0.7, 0.0],
            [0.4, 0.0, 0.0, 0.6],
        ],
        [
            [0.3, 0.7, 0.0, 0.0],
            [0.0, 0.3, 0.7, 0.0],
            [0.0, 0.0, 0.3, 0.7],
            [0.3, 0.0, 0.0, 0.7],
        ],
        target_reward(),
    )
    .expect("homogeneous target preset is valid")
}

/// `n_arms` identical circulant arms, time-average metric.
pub fn make_circulant_scenario(
    n_arms: usize,
    budget: usize,
) -> Result<ScenarioSpec, ScenarioError> {
    check_budget(n_arms, budget)?;
    Ok(ScenarioSpec {
        arms: vec![circulant_arm(); n_arms],
        budget,
        discount: TIME_AVERAGE_DISCOUNT,
        metric_kind: MetricKind::TimeAverage,
    })
}

/// `n_arms` identical smart targets, discounted cumulative metric.
pub fn make_homogeneous_target_scenario(
    n_arms: usize,
    budget: usize,
    discount: f64,
) -> Result<ScenarioSpec, ScenarioError> {
    check_budget(n_arms, budget)?;
    check_discount(discount)?;
    Ok(ScenarioSpec {
        arms: vec![homogeneous_target_arm(); n_arms],
        budget,
        discount,
        metric_kind: MetricKind::DiscountedCumulative,
    })
}

/// Sampling bounds for the heterogeneous generator.
const ACTIVE_STAY: (f64, f64) = (0.2, 0.5);
const PASSIVE_DOWN: (f64, f64) = (0.2, 0.5);
const PASSIVE_CALM_STAY: (f64, f64) = (0.6, 0.9);
const NT_ESCAPE: (f64, f64) = (0.2, 0.5);

/// Draws one random smart-target arm with the zero pattern of the
/// homogeneous preset.
///
/// Active rows 0..S-2 stay with probability in `[0.2, 0.5]` and otherwise
/// move one state up. Passive row 0 stays with probability in `[0.6, 0.9]`;
/// passive rows 1..S-2 move one state down with probability in `[0.2, 0.5]`.
/// The last state escapes to state 0 with probability in `[0.2, 0.5]` under
/// either action. Draws are consumed in that order.
pub fn random_target_arm<R: Rng + ?Sized>(rng: &mut R) -> ArmModel {
    const S: usize = 4;
    let mut active = [[0.0; S]; S];
    for (q, row) in active.iter_mut().enumerate().take(S - 1) {
        let stay = rng.gen_range(ACTIVE_STAY.0..=ACTIVE_STAY.1);
        row[q] = stay;
        row[q + 1] = 1.0 - stay;
    }
    let escape = rng.gen_range(NT_ESCAPE.0..=NT_ESCAPE.1);
    active[S - 1][0] = escape;
    active[S - 1][S - 1] = 1.0 - escape;

    let mut passive = [[0.0; S]; S];
    let stay = rng.gen_range(PASSIVE_CALM_STAY.0..=PASSIVE_CALM_STAY.1);
    passive[0][0] = stay;
    passive[0][1] = 1.0 - stay;
    for (q, row) in passive.iter_mut().enumerate().take(S - 1).skip(1) {
        let down = rng.gen_range(PASSIVE_DOWN.0..=PASSIVE_DOWN.1);
        row[q - 1] = down;
        row[q] = 1.0 - down;
    }
    let escape = rng.gen_range(NT_ESCAPE.0..=NT_ESCAPE.1);
    passive[S - 1][0] = escape;
    passive[S - 1][S - 1] = 1.0 - escape;

    ArmModel::new(passive, active, target_reward()).expect("generated rows are stochastic")
}

/// `n_arms` independently drawn smart targets; a pure function of its
/// arguments.
pub fn make_heterogeneous_target_scenario(
    n_arms: usize,
    budget: usize,
    discount: f64,
    rng_seed: u64,
) -> Result<ScenarioSpec, ScenarioError> {
    check_budget(n_arms, budget)?;
    check_discount(discount)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(ScenarioSpec {
        arms: (0..n_arms).map(|_| random_target_arm(&mut rng)).collect(),
        budget,
        discount,
        metric_kind: MetricKind::DiscountedCumulative,
    })
}
