//! Exact single-arm machinery for the Whittle index.
//!
//! The subsidized sub-problem pays `R(x, 0) + lambda` for the passive action
//! and `R(x, 1)` for the active one. Solving it by value iteration gives
//! `Q_lambda`, from which
//!
//! ```text
//! D_x(lambda) = Q_lambda(x, 1) - Q_lambda(x, 0)
//! ```
//!
//! is the activate-first minus passive-first gap. An arm is strongly
//! indexable when every `D_x` is strictly decreasing in `lambda`; the Whittle
//! index of `x` is the root of `D_x`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ArmModel, ScenarioSpec, ACTIVE, PASSIVE};

/// Value-iteration iteration cap.
pub const MAX_ITERATIONS: usize = 1_000_000;
/// Default value tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Minimum per-step drop for a D curve to count as strictly decreasing.
pub const STRICT_DECREASE_TOL: f64 = 1e-9;

const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid solver input: {0}")]
    InvalidInput(String),

    #[error(
        "D_{state}(lambda) does not change sign on [{lo}, {hi}] (D(lo) = {d_lo}, D(hi) = {d_hi})"
    )]
    NotIndexableAtState {
        state: usize,
        lo: f64,
        hi: f64,
        d_lo: f64,
        d_hi: f64,
    },

    #[error("D_{state}(lambda) is not monotone near lambda = {lambda}")]
    AuditFailure { state: usize, lambda: f64 },
}

/// An arm with a passive subsidy.
#[derive(Debug, Clone, Copy)]
pub struct SubsidizedArm<'a> {
    pub arm: &'a ArmModel,
    pub subsidy: f64,
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctions {
    /// `q[x][a]`; the passive entry includes the subsidy.
    pub q: Vec<[f64; 2]>,
    /// `v[x] = max(q[x][0], q[x][1])`.
    pub v: Vec<f64>,
    pub iterations: usize,
    /// Bellman residual of the value function `q` was backed up from; the
    /// residual of `v` itself is at most `discount` times this.
    pub residual: f64,
}

impl ValueFunctions {
    pub fn gap(&self, state: usize) -> f64 {
        self.q[state][ACTIVE] - self.q[state][PASSIVE]
    }
}

fn q_from_v(sub: &SubsidizedArm<'_>, v: &[f64], q: &mut [[f64; 2]]) {
    let arm = sub.arm;
    for (x, qx) in q.iter_mut().enumerate() {
        qx[PASSIVE] =
            arm.reward(x, PASSIVE) + sub.subsidy + sub.discount * arm.kernel_passive.expect(x, v);
        qx[ACTIVE] = arm.reward(x, ACTIVE) + sub.discount * arm.kernel_active.expect(x, v);
    }
}

/// Bellman-operator residual `max_x |(T v)(x) - v(x)|`.
pub fn bellman_residual(sub: &SubsidizedArm<'_>, v: &[f64]) -> f64 {
    let mut q = vec![[0.0; 2]; v.len()];
    q_from_v(sub, v, &mut q);
    q.iter()
        .zip(v)
        .map(|(qx, vx)| (qx[0].max(qx[1]) - vx).abs())
        .fold(0.0, f64::max)
}

/// Solves the subsidized sub-problem by value iteration so that `v` is
/// within `tol` of `V*`.
pub fn solve_subsidized(sub: &SubsidizedArm<'_>, tol: f64) -> Result<ValueFunctions, SolverError> {
    solve_subsidized_from(sub, tol, None)
}

/// As [`solve_subsidized`], starting from `initial` when given.
pub fn solve_subsidized_from(
    sub: &SubsidizedArm<'_>,
    tol: f64,
    initial: Option<&[f64]>,
) -> Result<ValueFunctions, SolverError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(SolverError::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }
    if !(sub.discount > 0.0 && sub.discount < 1.0) {
        return Err(SolverError::InvalidInput(format!(
            "discount must lie in (0, 1), got {}",
            sub.discount
        )));
    }
    if !sub.subsidy.is_finite() {
        return Err(SolverError::InvalidInput("subsidy is not finite".into()));
    }
    let s = sub.arm.state_count;
    let beta = sub.discount;
    // a Bellman residual of eps (1 - b) / (2 b) puts v within eps / 2 of V*
    let threshold = tol * (1.0 - beta) / (2.0 * beta);
    let mut v = match initial {
        Some(init) if init.len() == s => init.to_vec(),
        _ => vec![0.0; s],
    };
    let mut q = vec![[0.0; 2]; s];
    let mut span = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        q_from_v(sub, &v, &mut q);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (vx, qx) in v.iter_mut().zip(&q) {
            let nv = qx[0].max(qx[1]);
            lo = lo.min(nv - *vx);
            hi = hi.max(nv - *vx);
            *vx = nv;
        }
        span = hi - lo;
        // below this the differences are rounding noise
        let floor = 64.0 * f64::EPSILON * v.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        // MacQueen bounds: V* - v lies in [b lo, b hi] / (1 - b). Shifting v
        // to the midpoint leaves a residual of at most b * span / 2.
        if beta * span / 2.0 <= threshold.max(floor) {
            let shift = beta / (1.0 - beta) * 0.5 * (lo + hi);
            v.iter_mut().for_each(|vx| *vx += shift);
            q_from_v(sub, &v, &mut q);
            let backed: Vec<f64> = q.iter().map(|qx| qx[0].max(qx[1])).collect();
            let residual = backed
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            return Ok(ValueFunctions {
                q,
                v: backed,
                iterations: it + 1,
                residual,
            });
        }
    }
    Err(SolverError::NoConvergence {
        iterations: MAX_ITERATIONS,
        residual: beta * span / 2.0,
    })
}

/// `D_state(lambda)`.
pub fn d_gap(
    arm: &ArmModel,
    discount: f64,
    lambda: f64,
    state: usize,
    tol: f64,
) -> Result<f64, SolverError> {
    if state >= arm.state_count {
        return Err(SolverError::InvalidInput(format!(
            "state {state} out of range 0..{}",
            arm.state_count
        )));
    }
    let sub = SubsidizedArm {
        arm,
        subsidy: lambda,
        discount,
    };
    Ok(solve_subsidized(&sub, tol)?.gap(state))
}

/// Symmetric subsidy bracket `+-2 max|R| / (1 - discount)`.
pub fn subsidy_bracket(arm: &ArmModel, discount: f64) -> (f64, f64) {
    let spread = 2.0 * arm.max_abs_reward();
    let half = (spread / (1.0 - discount)).max(1.0);
    (-half, half)
}

/// Per-state Whittle index by bisection on `D_x`.
///
/// Value iteration runs at `tol / 10` so the reported `D` at the returned
/// subsidy is within `tol` of zero.
pub fn whittle_index(arm: &ArmModel, discount: f64, tol: f64) -> Result<Vec<f64>, SolverError> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(SolverError::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let vi_tol = tol * 0.1;
    let (lo0, hi0) = subsidy_bracket(arm, discount);
    let solve = |lambda: f64, warm: Option<&[f64]>| {
        solve_subsidized_from(
            &SubsidizedArm {
                arm,
                subsidy: lambda,
                discount,
            },
            vi_tol,
            warm,
        )
    };
    let at_lo = solve(lo0, None)?;
    let at_hi = solve(hi0, None)?;

    let mut indices = Vec::with_capacity(arm.state_count);
    for state in 0..arm.state_count {
        let (mut lo, mut hi) = (lo0, hi0);
        let (mut d_lo, mut d_hi) = (at_lo.gap(state), at_hi.gap(state));
        if !(d_lo > 0.0 && d_hi < 0.0) {
            return Err(SolverError::NotIndexableAtState {
                state,
                lo,
                hi,
                d_lo,
                d_hi,
            });
        }
        let mut warm = at_lo.v.clone();
        let mut root = None;
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let vf = solve(mid, Some(&warm))?;
            let d = vf.gap(state);
            if d > d_lo || d < d_hi {
                return Err(SolverError::AuditFailure { state, lambda: mid });
            }
            if d.abs() <= tol || hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
                root = Some(mid);
                break;
            }
            if d > 0.0 {
                lo = mid;
                d_lo = d;
            } else {
                hi = mid;
                d_hi = d;
            }
            warm = vf.v;
        }
        indices.push(root.unwrap_or(0.5 * (lo + hi)));
    }
    Ok(indices)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    StronglyIndexable,
    NotStronglyIndexable,
    /// Some curve has a plateau within the strict-decrease tolerance.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexabilityReport {
    pub grid: Vec<f64>,
    /// `d_curves[x][i] = D_x(grid[i])`.
    pub d_curves: Vec<Vec<f64>>,
    pub strongly_indexable: bool,
    pub verdict: Verdict,
    /// `None` when bisection fails for some state.
    pub whittle_index: Option<Vec<f64>>,
}

/// Linearly spaced grid with `points` entries on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

/// Classifies a set of curves against the strict-decrease rule.
pub fn classify_curves(curves: &[Vec<f64>]) -> Verdict {
    let mut plateau = false;
    for curve in curves {
        for w in curve.windows(2) {
            let drop = w[0] - w[1];
            if drop > STRICT_DECREASE_TOL {
                continue;
            }
            if drop >= -STRICT_DECREASE_TOL {
                plateau = true;
            } else {
                return Verdict::NotStronglyIndexable;
            }
        }
    }
    if plateau {
        Verdict::Inconclusive
    } else {
        Verdict::StronglyIndexable
    }
}

/// Evaluates every `D_x` on `grid` and checks strict decrease.
pub fn audit_strong_indexability(
    arm: &ArmModel,
    discount: f64,
    grid: &[f64],
) -> Result<IndexabilityReport, SolverError> {
    if grid.len() < 3 {
        return Err(SolverError::InvalidInput(format!(
            "grid needs at least 3 points, got {}",
            grid.len()
        )));
    }
    if grid.iter().any(|l| !l.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolverError::InvalidInput(
            "grid must be finite and strictly increasing".into(),
        ));
    }
    let s = arm.state_count;
    let mut d_curves = vec![Vec::with_capacity(grid.len()); s];
    // D is accurate to about tol; grid steps are far coarser than this
    let tol = 1e-8;
    let mut warm: Option<Vec<f64>> = None;
    for &lambda in grid {
        let vf = solve_subsidized_from(
            &SubsidizedArm {
                arm,
                subsidy: lambda,
                discount,
            },
            tol,
            warm.as_deref(),
        )?;
        for (x, curve) in d_curves.iter_mut().enumerate() {
            curve.push(vf.gap(x));
        }
        warm = Some(vf.v);
    }
    let verdict = classify_curves(&d_curves);
    let whittle_index = whittle_index(arm, discount, DEFAULT_TOL).ok();
    Ok(IndexabilityReport {
        grid: grid.to_vec(),
        d_curves,
        strongly_indexable: verdict == Verdict::StronglyIndexable,
        verdict,
        whittle_index,
    })
}

/// Dual function `sum_n L_n(lambda) + lambda (K - N) / (1 - beta)`, with each
/// `L_n` averaged over a uniform initial state.
pub fn lagrangian_value(
    scenario: &ScenarioSpec,
    lambda: f64,
    tol: f64,
) -> Result<f64, SolverError> {
    let beta = scenario.discount;
    let mut total = 0.0;
    let mut cache: Vec<(&ArmModel, f64)> = Vec::new();
    for arm in &scenario.arms {
        let value = match cache.iter().find(|(a, _)| *a == arm) {
            Some((_, v)) => *v,
            None => {
                let vf = solve_subsidized(
                    &SubsidizedArm {
                        arm,
                        subsidy: lambda,
                        discount: beta,
                    },
                    tol,
                )?;
                let mean = vf.v.iter().sum::<f64>() / vf.v.len() as f64;
                cache.push((arm, mean));
                mean
            }
        };
        total += value;
    }
    let k = scenario.budget as f64;
    let n = scenario.n_arms() as f64;
    Ok(total + lambda * (k - n) / (1.0 - beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{circulant_arm, homogeneous_target_arm, make_homogeneous_target_scenario};

    fn flat_arm(reward: f64) -> ArmModel {
        ArmModel::new(
            [[0.5, 0.5], [0.25, 0.75]],
            [[0.5, 0.5], [0.25, 0.75]],
            vec![[reward, reward], [reward, reward]],
        )
        .unwrap()
    }

    #[test]
    fn zero_rewards_zero_values() {
        let arm = flat_arm(0.0);
        let vf = solve_subsidized(
            &SubsidizedArm {
                arm: &arm,
                subsidy: 0.0,
                discount: 0.9,
            },
            1e-9,
        )
        .unwrap();
        assert!(vf.q.iter().flatten().all(|&q| q == 0.0));
        assert!(vf.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn geometric_series_value() {
        // two states, both absorbing; state 0 pays 1 passive and 0 active
        let arm = ArmModel::new(
            [[1.0, 0.0], [0.0, 1.0]],
            [[1.0, 0.0], [0.0, 1.0]],
            vec![[1.0, 0.0], [0.0, 0.0]],
        )
        .unwrap();
        let tol = 1e-9;
        let vf = solve_subsidized(
            &SubsidizedArm {
                arm: &arm,
                subsidy: 0.0,
                discount: 0.5,
            },
            tol,
        )
        .unwrap();
        assert!((vf.v[0] - 2.0).abs() <= tol);
        assert!(vf.v[1].abs() <= tol);
    }

    #[test]
    fn v_is_max_of_q() {
        let arm = homogeneous_target_arm();
        let vf = solve_subsidized(
            &SubsidizedArm {
                arm: &arm,
                subsidy: 0.7,
                discount: 0.95,
            },
            1e-8,
        )
        .unwrap();
        for (qx, vx) in vf.q.iter().zip(&vf.v) {
            assert_eq!(*vx, qx[0].max(qx[1]));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let arm = circulant_arm();
        let sub = SubsidizedArm {
            arm: &arm,
            subsidy: 0.0,
            discount: 0.9,
        };
        assert!(matches!(
            solve_subsidized(&sub, 0.0),
            Err(SolverError::InvalidInput(_))
        ));
        assert!(matches!(
            d_gap(&arm, 0.9, 0.0, 4, 1e-6),
            Err(SolverError::InvalidInput(_))
        ));
        let bad = SubsidizedArm {
            discount: 1.0,
            ..sub
        };
        assert!(solve_subsidized(&bad, 1e-6).is_err());
    }

    #[test]
    fn large_subsidy_makes_every_gap_negative() {
        let arm = homogeneous_target_arm();
        let beta = 0.999;
        let (_, hi) = subsidy_bracket(&arm, beta);
        for x in 0..4 {
            assert!(d_gap(&arm, beta, hi, x, 1e-6).unwrap() < 0.0);
        }
    }

    #[test]
    fn indistinguishable_actions_have_zero_index_and_linear_gap() {
        let arm = flat_arm(1.0);
        let idx = whittle_index(&arm, 0.9, 1e-8).unwrap();
        for i in idx {
            assert!(i.abs() <= 1e-6, "{i}");
        }
        let grid = linear_grid(-1.0, 1.0, 5);
        let report = audit_strong_indexability(&arm, 0.9, &grid).unwrap();
        for curve in &report.d_curves {
            for (d, l) in curve.iter().zip(&grid) {
                assert!((d + l).abs() < 1e-8, "D = {d}, lambda = {l}");
            }
        }
        assert!(report.strongly_indexable);
    }

    #[test]
    fn bisection_root_is_consistent() {
        let arm = homogeneous_target_arm();
        let tol = 1e-6;
        let idx = whittle_index(&arm, 0.99, tol).unwrap();
        for (x, &l) in idx.iter().enumerate() {
            let d = d_gap(&arm, 0.99, l, x, tol * 0.1).unwrap();
            assert!(d.abs() <= 2.0 * tol, "state {x}: D = {d}");
        }
    }

    #[test]
    fn circulant_gap_at_published_index() {
        let arm = circulant_arm();
        let d = d_gap(&arm, 0.999, 1.0, 2, 1e-6).unwrap();
        assert!(d.abs() <= 1e-2, "{d}");
    }

    #[test]
    fn audit_rejects_short_or_unsorted_grids() {
        let arm = circulant_arm();
        assert!(audit_strong_indexability(&arm, 0.9, &[0.0, 1.0]).is_err());
        assert!(audit_strong_indexability(&arm, 0.9, &[0.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn classify_detects_plateau_and_increase() {
        assert_eq!(
            classify_curves(&[vec![3.0, 2.0, 1.0]]),
            Verdict::StronglyIndexable
        );
        assert_eq!(
            classify_curves(&[vec![3.0, 3.0, 1.0]]),
            Verdict::Inconclusive
        );
        assert_eq!(
            classify_curves(&[vec![3.0, 3.0, 4.0]]),
            Verdict::NotStronglyIndexable
        );
    }

    #[test]
    fn lagrangian_linear_term() {
        let mut s = make_homogeneous_target_scenario(3, 1, 0.9).unwrap();
        let tol = 1e-9;
        let single = {
            let vf = solve_subsidized(
                &SubsidizedArm {
                    arm: &s.arms[0],
                    subsidy: 0.4,
                    discount: 0.9,
                },
                tol,
            )
            .unwrap();
            vf.v.iter().sum::<f64>() / 4.0
        };
        let l = lagrangian_value(&s, 0.4, tol).unwrap();
        let expected = 3.0 * single + 0.4 * (1.0 - 3.0) / (1.0 - 0.9);
        assert!((l - expected).abs() < 1e-9);

        // K = N is not a valid scenario, but the dual is still defined
        s.budget = 3;
        let l = lagrangian_value(&s, 0.4, tol).unwrap();
        assert!((l - 3.0 * single).abs() < 1e-9);
    }
}
