//! Dynamic programming: evaluation, greedy extraction, policy and value iteration.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{ModelView, Policy};
use crate::value::ValueTable;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;
/// Actions whose values differ by at most this much count as tied.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Exact,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieRule {
    LowestIndex,
    SeededRandom(u64),
}

fn check_policy<M: ModelView>(m: &M, policy: &Policy) -> Result<()> {
    policy.validate(m.num_states(), m.num_actions())
}

/// `(r_π, P_π)` as dense rows.
fn policy_system<M: ModelView>(m: &M, policy: &Policy) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.num_states();
    let gamma = m.gamma();
    let mut r = vec![0.0; n];
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for (a, w) in policy.support(s) {
            for o in m.outcomes(s, a) {
                r[s] += w * o.prob * o.reward;
                a_mat[(s, o.next)] -= gamma * w * o.prob;
            }
        }
    }
    (r, a_mat)
}

/// State values of `policy` in `m`.
///
/// Exact mode solves `(I - γP_π)V = r_π` by LU. Iterative mode runs Jacobi
/// sweeps until the a-posteriori error bound `γ/(1-γ)·‖ΔV‖∞` drops below `tol`.
pub fn policy_evaluation<M: ModelView>(m: &M, policy: &Policy, mode: EvalMode, tol: f64) -> Result<Vec<f64>> {
    check_policy(m, policy)?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    match mode {
        EvalMode::Exact => Ok(exact_values(m, policy)),
        EvalMode::Iterative => iterative_values(m, policy, tol, DEFAULT_MAX_ITERS),
    }
}

fn exact_values<M: ModelView>(m: &M, policy: &Policy) -> Vec<f64> {
    let (r, a_mat) = policy_system(m, policy);
    let b = DVector::from_vec(r);
    // I - γP_π is strictly diagonally dominant for γ < 1, so LU cannot fail.
    let v = a_mat.lu().solve(&b).expect("I - γP is nonsingular for γ < 1");
    v.iter().copied().collect()
}

fn iterative_values<M: ModelView>(m: &M, policy: &Policy, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let n = m.num_states();
    let gamma = m.gamma();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut delta = f64::INFINITY;
    for _ in 0..max_iters {
        delta = 0.0;
        for s in 0..n {
            let mut x = 0.0;
            for (a, w) in policy.support(s) {
                x += w * m.backup(s, a, |t| v[t]);
            }
            delta = f64::max(delta, (x - v[s]).abs());
            next[s] = x;
        }
        std::mem::swap(&mut v, &mut next);
        if delta * gamma < tol * (1.0 - gamma) {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence { iterations: max_iters, residual: delta })
}

/// Exact state values; panics only on an invalid policy.
pub fn state_values<M: ModelView>(m: &M, policy: &Policy) -> Result<Vec<f64>> {
    check_policy(m, policy)?;
    Ok(exact_values(m, policy))
}

/// `J = Σ_s d(s)·V^π(s)`, computed exactly.
pub fn performance<M: ModelView>(m: &M, policy: &Policy) -> Result<f64> {
    let v = state_values(m, policy)?;
    Ok(m.initial_dist().iter().zip(&v).map(|(d, v)| d * v).sum())
}

/// Expected undiscounted return over the first `horizon` steps.
pub fn finite_horizon_return<M: ModelView>(m: &M, policy: &Policy, horizon: usize) -> Result<f64> {
    check_policy(m, policy)?;
    let n = m.num_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..horizon {
        for (s, slot) in next.iter_mut().enumerate() {
            let mut x = 0.0;
            for (a, w) in policy.support(s) {
                for o in m.outcomes(s, a) {
                    x += w * o.prob * (o.reward + v[o.next]);
                }
            }
            *slot = x;
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(m.initial_dist().iter().zip(&v).map(|(d, v)| d * v).sum())
}

/// `Q(s,a) = Σ p·(r + γ·V(s'))`.
pub fn action_values<M: ModelView>(m: &M, v: &[f64]) -> ValueTable {
    let (ns, na) = (m.num_states(), m.num_actions());
    let mut q = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            q.push(m.backup(s, a, |t| v[t]));
        }
    }
    ValueTable::from_values(ns, na, q).expect("shape matches by construction")
}

/// Lowest action whose value is within [`TIE_TOL`] of the row maximum.
pub fn greedy_action(row: &[f64]) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter().position(|&x| x >= best - TIE_TOL).unwrap_or(0)
}

/// All actions within [`TIE_TOL`] of the row maximum.
pub fn tied_actions(row: &[f64]) -> Vec<usize> {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..row.len()).filter(|&a| row[a] >= best - TIE_TOL).collect()
}

pub fn greedy_policy(q: &ValueTable, tie_rule: TieRule) -> Policy {
    let ns = q.num_states();
    match tie_rule {
        TieRule::LowestIndex => Policy::Deterministic((0..ns).map(|s| greedy_action(q.row(s))).collect()),
        TieRule::SeededRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Policy::Deterministic(
                (0..ns)
                    .map(|s| *tied_actions(q.row(s)).choose(&mut rng).expect("row is nonempty"))
                    .collect(),
            )
        }
    }
}

/// `Q^π` computed exactly.
pub fn policy_action_values<M: ModelView>(m: &M, policy: &Policy) -> Result<ValueTable> {
    let v = state_values(m, policy)?;
    Ok(action_values(m, &v))
}

/// One policy-iteration step from `base`: greedy with respect to `Q^base`.
pub fn one_step_policy_improvement<M: ModelView>(m: &M, base: &Policy) -> Result<Policy> {
    let q = policy_action_values(m, base)?;
    Ok(greedy_policy(&q, TieRule::LowestIndex))
}

/// `n` exact policy-iteration steps from `base`, stopping early at a fixed point.
pub fn n_step_policy_improvement<M: ModelView>(m: &M, base: &Policy, n: usize) -> Result<Policy> {
    if n == 0 {
        return Err(Error::invalid("number of improvement steps must be at least 1"));
    }
    let mut policy = one_step_policy_improvement(m, base)?;
    for _ in 1..n {
        let next = one_step_policy_improvement(m, &policy)?;
        if next == policy {
            break;
        }
        policy = next;
    }
    Ok(policy)
}

/// One synchronous Bellman optimality sweep `out = T q` on a tabular table.
pub fn bellman_optimality_sweep<M: ModelView>(m: &M, q: &ValueTable, out: &mut ValueTable) {
    let na = m.num_actions();
    let rows = out.rows_mut();
    for s in 0..m.num_states() {
        for a in 0..na {
            rows[s * na + a] = m.backup(s, a, |t| q.max(t));
        }
    }
}

/// Value iteration from `start` until successive sweeps differ by less than
/// `tol` in sup norm.
pub fn value_iteration_from<M: ModelView>(
    m: &M,
    start: ValueTable,
    tol: f64,
    max_iters: usize,
) -> Result<(ValueTable, usize)> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if start.num_states() != m.num_states() || start.num_actions() != m.num_actions() || !start.representation().is_tabular() {
        return Err(Error::shape("value iteration needs a tabular table shaped to the model"));
    }
    let mut q = start;
    let mut next = q.clone();
    let mut delta = f64::INFINITY;
    for k in 0..max_iters {
        bellman_optimality_sweep(m, &q, &mut next);
        delta = next.sup_distance(&q);
        std::mem::swap(&mut q, &mut next);
        if delta < tol {
            return Ok((q, k + 1));
        }
    }
    Err(Error::NoConvergence { iterations: max_iters, residual: delta })
}

/// Optimal action values and the lowest-index greedy (certainty-equivalence) policy.
pub fn value_iteration<M: ModelView>(m: &M, tol: f64, max_iters: usize) -> Result<(ValueTable, Policy)> {
    let start = ValueTable::zeros(m.num_states(), m.num_actions());
    let (q, _) = value_iteration_from(m, start, tol, max_iters)?;
    let policy = greedy_policy(&q, TieRule::LowestIndex);
    Ok((q, policy))
}

/// Certainty-equivalence policy with default tolerances.
pub fn optimal_policy<M: ModelView>(m: &M) -> Result<Policy> {
    Ok(value_iteration(m, DEFAULT_TOL, DEFAULT_MAX_ITERS)?.1)
}

/// A maximizing policy and its exact performance.
pub fn max_performance<M: ModelView>(m: &M) -> Result<(f64, Policy)> {
    let policy = optimal_policy(m)?;
    Ok((performance(m, &policy)?, policy))
}

/// A minimizing policy (greedy on the reward-negated model) and its exact
/// performance in `m`.
pub fn min_performance(m: &crate::mdp::TabularMdp) -> Result<(f64, Policy)> {
    let policy = optimal_policy(&m.negated_rewards())?;
    Ok((performance(m, &policy)?, policy))
}
