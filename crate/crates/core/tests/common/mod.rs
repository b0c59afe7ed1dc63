//! Independent reference solvers shared by the integration tests.

#![allow(dead_code)]

use isq_core::arm::ArmModel;

fn q_value(arm: &ArmModel, v: &[f64], subsidy: f64, beta: f64, x: usize, a: usize) -> f64 {
    let s = arm.state_count;
    arm.reward(x, a)
        + if a == 0 { subsidy } else { 0.0 }
        + beta * (0..s).map(|y| arm.kernel(a).get(x, y) * v[y]).sum::<f64>()
}

/// Solves `m x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn solve_linear(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                let pivot = m[c].clone();
                for (dst, src) in m[r][c..].iter_mut().zip(&pivot[c..]) {
                    *dst -= f * src;
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|x| b[x] / m[x][x]).collect()
}

/// Exact values of the subsidized arm by policy iteration.
pub fn policy_iteration(arm: &ArmModel, subsidy: f64, beta: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let s = arm.state_count;
    let mut policy = vec![0usize; s];
    for _ in 0..1000 {
        let m: Vec<Vec<f64>> = (0..s)
            .map(|x| {
                (0..s)
                    .map(|y| (x == y) as u8 as f64 - beta * arm.kernel(policy[x]).get(x, y))
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..s)
            .map(|x| arm.reward(x, policy[x]) + if policy[x] == 0 { subsidy } else { 0.0 })
            .collect();
        let v = solve_linear(m, b);
        let q: Vec<[f64; 2]> = (0..s)
            .map(|x| {
                [
                    q_value(arm, &v, subsidy, beta, x, 0),
                    q_value(arm, &v, subsidy, beta, x, 1),
                ]
            })
            .collect();
        let next: Vec<usize> = (0..s)
            .map(|x| {
                let [p, a] = q[x];
                if a > p + 1e-12 {
                    1
                } else if p > a + 1e-12 {
                    0
                } else {
                    policy[x]
                }
            })
            .collect();
        if next == policy {
            return (v, q);
        }
        policy = next;
    }
    panic!("policy iteration did not settle");
}

/// `D_x(lambda)` from the exact solve.
pub fn exact_gap(arm: &ArmModel, subsidy: f64, beta: f64, x: usize) -> f64 {
    let (_, q) = policy_iteration(arm, subsidy, beta);
    q[x][1] - q[x][0]
}
