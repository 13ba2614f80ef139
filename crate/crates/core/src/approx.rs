//! Block state aggregation for value tables.
//!
//! Only the value estimate is aggregated; models stay tabular. Backups for a
//! cluster average the per-state backups of its members with equal weights.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dp::{self, greedy_action};
use crate::error::{Error, Result};
use crate::gridworld::{state_cells, GridSpec};
use crate::mdp::{ModelView, Policy};
use crate::value::{Representation, ValueTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAggregator {
    pub block_width: usize,
    pub block_height: usize,
    mapping: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl StateAggregator {
    /// Build from an explicit state-to-cluster map. Cluster ids must be dense.
    pub fn from_mapping(block_width: usize, block_height: usize, mapping: Vec<usize>) -> Result<Self> {
        let num_clusters = mapping.iter().max().map_or(0, |m| m + 1);
        let mut members = vec![Vec::new(); num_clusters];
        for (s, &c) in mapping.iter().enumerate() {
            members[c].push(s);
        }
        if members.iter().any(Vec::is_empty) {
            return Err(Error::invalid("cluster ids must be contiguous"));
        }
        Ok(StateAggregator { block_width, block_height, mapping, members })
    }

    pub fn num_states(&self) -> usize {
        self.mapping.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn cluster_of(&self, s: usize) -> usize {
        self.mapping[s]
    }

    pub fn members(&self, cluster: usize) -> &[usize] {
        &self.members[cluster]
    }

    /// Every cluster is a single state and cluster ids equal state ids.
    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(s, &c)| s == c)
    }
}

/// Tile the grid into `block_width x block_height` rectangles (edge blocks
/// truncated). Cluster ids follow the row-major order of the blocks' first
/// open cell; the terminal state gets the last cluster to itself.
pub fn make_block_aggregator(spec: &GridSpec, block_width: usize, block_height: usize) -> Result<StateAggregator> {
    if block_width == 0 || block_height == 0 {
        return Err(Error::invalid("block dimensions must be at least 1"));
    }
    let cells = state_cells(spec);
    let blocks_x = spec.width.div_ceil(block_width);
    let mut block_id: Vec<Option<usize>> = vec![None; blocks_x * spec.height.div_ceil(block_height)];
    let mut next = 0;
    let mut mapping = Vec::with_capacity(cells.len() + 1);
    for c in &cells {
        let b = (c.1 / block_height) * blocks_x + c.0 / block_width;
        let id = *block_id[b].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
        mapping.push(id);
    }
    mapping.push(next);
    StateAggregator::from_mapping(block_width, block_height, mapping)
}

/// Move the row of `s` towards `target` by step size `alpha`.
pub fn aggregated_q_update(q: &mut ValueTable, s: usize, a: usize, target: f64, alpha: f64) -> Result<()> {
    if s >= q.num_states() || a >= q.num_actions() {
        return Err(Error::shape(format!("index ({s}, {a}) outside the value table")));
    }
    if q.row_index(s) >= q.num_rows() {
        return Err(Error::shape(format!("cluster of state {s} outside the value table")));
    }
    let old = q.q(s, a);
    q.set(s, a, old + alpha * (target - old));
    Ok(())
}

fn members_backup<M: ModelView>(m: &M, members: &[usize], a: usize, value: impl Fn(usize) -> f64 + Copy) -> f64 {
    if let [only] = members {
        return m.backup(*only, a, value);
    }
    let sum: f64 = members.iter().map(|&s| m.backup(s, a, value)).sum();
    sum / members.len() as f64
}

/// One synchronous optimality sweep on an aggregated table.
pub fn aggregated_optimality_sweep<M: ModelView>(m: &M, agg: &StateAggregator, q: &ValueTable, out: &mut ValueTable) {
    let na = m.num_actions();
    let rows = out.rows_mut();
    for c in 0..agg.num_clusters() {
        for a in 0..na {
            rows[c * na + a] = members_backup(m, agg.members(c), a, |t| q.max(t));
        }
    }
}

/// Sweep until successive tables differ by less than `tol`. Dispatches to the
/// tabular routine for tabular and identity representations.
pub fn value_iteration_with<M: ModelView>(m: &M, start: ValueTable, tol: f64, max_iters: usize) -> Result<ValueTable> {
    let agg = match start.representation() {
        Representation::Aggregated(agg) if !agg.is_identity() => Arc::clone(agg),
        _ => return Ok(dp::value_iteration_from(m, start, tol, max_iters)?.0),
    };
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let mut q = start;
    let mut next = q.clone();
    let mut delta = f64::INFINITY;
    for _ in 0..max_iters {
        aggregated_optimality_sweep(m, &agg, &q, &mut next);
        delta = next.sup_distance(&q);
        std::mem::swap(&mut q, &mut next);
        if delta < tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence { iterations: max_iters, residual: delta })
}

/// Cluster averages of the exact `Q^π`, i.e. the values an aggregated table
/// settles on when fitted to Monte Carlo returns from every state.
pub fn averaged_policy_values<M: ModelView>(m: &M, agg: &Arc<StateAggregator>, policy: &Policy) -> Result<ValueTable> {
    let exact = dp::policy_action_values(m, policy)?;
    let repr = Representation::Aggregated(Arc::clone(agg));
    let mut q = ValueTable::zeros_with(&repr, m.num_states(), m.num_actions())?;
    let na = m.num_actions();
    let rows = q.rows_mut();
    for c in 0..agg.num_clusters() {
        let members = agg.members(c);
        for a in 0..na {
            let sum: f64 = members.iter().map(|&s| exact.q(s, a)).sum();
            rows[c * na + a] = sum / members.len() as f64;
        }
    }
    Ok(q)
}

/// Greedy policy of a table; all members of a cluster pick the same action.
pub fn greedy_from_table(q: &ValueTable) -> Policy {
    Policy::Deterministic((0..q.num_states()).map(|s| greedy_action(q.row(s))).collect())
}

/// Rollout policy under a representation: exact one-step improvement for
/// tabular tables, greedy on the cluster-averaged `Q^base` otherwise.
pub fn rollout_policy<M: ModelView>(m: &M, base: &Policy, repr: &Representation) -> Result<Policy> {
    match repr.aggregator() {
        Some(agg) if !agg.is_identity() => {
            let q = averaged_policy_values(m, agg, base)?;
            Ok(greedy_from_table(&q))
        }
        _ => dp::one_step_policy_improvement(m, base),
    }
}

/// Certainty-equivalence policy under a representation.
pub fn ce_policy<M: ModelView>(m: &M, repr: &Representation) -> Result<Policy> {
    let start = ValueTable::zeros_with(repr, m.num_states(), m.num_actions())?;
    let q = value_iteration_with(m, start, dp::DEFAULT_TOL, dp::DEFAULT_MAX_ITERS)?;
    Ok(greedy_from_table(&q))
}
