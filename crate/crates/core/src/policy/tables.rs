//! Per-arm learning state and the tabular update rules.

use serde::{Deserialize, Serialize};

use crate::arm::{ArmModel, ACTIVE, PASSIVE};

use super::PolicyError;

/// Estimates `Q(x, a)` for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: Vec<[f64; 2]>,
}

impl QTable {
    /// Initialized to the arm's reward table.
    pub fn from_rewards(arm: &ArmModel) -> Self {
        Self {
            values: arm.reward.clone(),
        }
    }

    pub fn zeros(states: usize) -> Self {
        Self {
            values: vec![[0.0; 2]; states],
        }
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state][action]
    }

    pub fn max_at(&self, state: usize) -> f64 {
        let [p, a] = self.values[state];
        p.max(a)
    }

    /// `Q(x, 1) - Q(x, 0)`.
    pub fn difference(&self, state: usize) -> f64 {
        self.values[state][ACTIVE] - self.values[state][PASSIVE]
    }
}

/// Learned per-state index of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTable {
    pub values: Vec<f64>,
}

impl IndexTable {
    pub fn zeros(states: usize) -> Self {
        Self {
            values: vec![0.0; states],
        }
    }

    pub fn get(&self, state: usize) -> f64 {
        self.values[state]
    }

    /// Re-derives the index of `state` from `q`.
    pub fn refresh(&mut self, q: &QTable, state: usize) {
        self.values[state] = q.difference(state);
    }
}

/// Visit counts `L(x, a)` of one arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitCounter {
    pub counts: Vec<[u64; 2]>,
}

impl VisitCounter {
    pub fn new(states: usize) -> Self {
        Self {
            counts: vec![[0; 2]; states],
        }
    }

    pub fn get(&self, state: usize, action: usize) -> u64 {
        self.counts[state][action]
    }

    /// Harmonic rate `1 / (L + 1)` from the current count, then counts the
    /// visit.
    pub fn take_rate(&mut self, state: usize, action: usize) -> f64 {
        let c = &mut self.counts[state][action];
        let rate = 1.0 / (*c as f64 + 1.0);
        *c += 1;
        rate
    }
}

/// One observed `(x, a, r, x')` tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Time-ordered transitions of one arm within the current episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMemory {
    length: usize,
    tuples: Vec<Transition>,
}

impl EpisodeMemory {
    pub fn new(length: usize) -> Self {
        Self {
            length,
            tuples: Vec::with_capacity(length),
        }
    }

    pub fn with_tuples(length: usize, tuples: Vec<Transition>) -> Self {
        Self { length, tuples }
    }

    pub fn push(&mut self, t: Transition) {
        self.tuples.push(t);
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.tuples.len() == self.length
    }

    pub fn tuples(&self) -> &[Transition] {
        &self.tuples
    }

    pub fn clear(&mut self) {
        self.tuples.clear();
    }
}

/// Forward Sarsa step for one arm.
///
/// `Q(x,a) <- (1 - alpha) Q(x,a) + alpha (r + beta Q(x', a'))` with
/// `alpha = 1 / (L(x,a) + 1)` taken before the visit is counted; the index of
/// `x` is refreshed afterwards. Returns the rate used.
pub fn sarsa_forward_update(
    q: &mut QTable,
    counter: &mut VisitCounter,
    index: &mut IndexTable,
    tr: &Transition,
    next_action: usize,
    discount: f64,
) -> f64 {
    let alpha = counter.take_rate(tr.state, tr.action);
    let target = tr.reward + discount * q.get(tr.next_state, next_action);
    let cell = &mut q.values[tr.state][tr.action];
    *cell = (1.0 - alpha) * *cell + alpha * target;
    index.refresh(q, tr.state);
    alpha
}

/// Q-learning step with an explicit rate; refreshes the index of `x`.
pub fn q_learning_update(
    q: &mut QTable,
    index: &mut IndexTable,
    tr: &Transition,
    rate: f64,
    discount: f64,
) {
    let target = tr.reward + discount * q.max_at(tr.next_state);
    let cell = &mut q.values[tr.state][tr.action];
    *cell = (1.0 - rate) * *cell + rate * target;
    index.refresh(q, tr.state);
}

/// Replays a complete episode memory newest-first with a constant rate.
///
/// The index of each replayed state is refreshed after its update.
pub fn backward_pass(
    q: &mut QTable,
    index: &mut IndexTable,
    memory: &EpisodeMemory,
    rate: f64,
    discount: f64,
) -> Result<(), PolicyError> {
    if !memory.is_complete() {
        return Err(PolicyError::IncompleteMemory {
            expected: memory.length,
            found: memory.len(),
        });
    }
    for tr in memory.tuples().iter().rev() {
        q_learning_update(q, index, tr, rate, discount);
    }
    Ok(())
}
