//! Rollout estimates and tree searches used at decision time.

use std::collections::{HashMap, VecDeque};

use rand::Rng;

use crate::dp::greedy_action;
use crate::error::{Error, Result};
use crate::mdp::{sample_outcome, ModelView, Policy};
use crate::value::ValueTable;

/// Monte-Carlo estimate of `Q^policy(state, a)` for every action: the mean
/// discounted return of `rollouts` simulated episodes that take `a` first and
/// then follow `policy`, each capped at `horizon` steps.
pub fn mc_rollout_values<M: ModelView, R: Rng + ?Sized>(
    state: usize,
    model: &M,
    rollouts: usize,
    policy: &Policy,
    horizon: usize,
    rng: &mut R,
) -> Vec<f64> {
    let gamma = model.gamma();
    (0..model.num_actions())
        .map(|a| {
            if model.is_terminal(state) {
                return 0.0;
            }
            let mut total = 0.0;
            for _ in 0..rollouts {
                let first = sample_outcome(model.outcomes(state, a), rng);
                let mut ret = first.reward;
                let mut s = first.next;
                let mut disc = gamma;
                for _ in 1..horizon {
                    if model.is_terminal(s) {
                        break;
                    }
                    let o = sample_outcome(model.outcomes(s, policy.sample(s, rng)), rng);
                    ret += disc * o.reward;
                    disc *= gamma;
                    s = o.next;
                }
                total += ret;
            }
            total / rollouts as f64
        })
        .collect()
}

/// Root action values of depth-`horizon` expectimax with zero-valued leaves.
///
/// Repeated `(state, depth)` subtrees are computed once; every distinct one
/// counts against `budget`.
pub fn exhaustive_search_values<M: ModelView>(state: usize, model: &M, horizon: usize, budget: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::invalid("search horizon must be at least 1"));
    }
    struct Search<'a, M> {
        model: &'a M,
        memo: HashMap<(usize, usize), f64>,
        budget: usize,
        horizon: usize,
    }
    impl<M: ModelView> Search<'_, M> {
        fn q(&mut self, s: usize, a: usize, depth: usize) -> Result<f64> {
            let gamma = self.model.gamma();
            let mut v = 0.0;
            for o in self.model.outcomes(s, a) {
                v += o.prob * (o.reward + gamma * self.value(o.next, depth - 1)?);
            }
            Ok(v)
        }
        fn value(&mut self, s: usize, depth: usize) -> Result<f64> {
            if depth == 0 || self.model.is_terminal(s) {
                return Ok(0.0);
            }
            if let Some(&v) = self.memo.get(&(s, depth)) {
                return Ok(v);
            }
            if self.memo.len() >= self.budget {
                return Err(Error::BudgetExceeded { horizon: self.horizon, budget: self.budget });
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..self.model.num_actions() {
                best = best.max(self.q(s, a, depth)?);
            }
            self.memo.insert((s, depth), best);
            Ok(best)
        }
    }
    let mut search = Search { model, memo: HashMap::new(), budget, horizon };
    (0..model.num_actions()).map(|a| search.q(state, a, horizon)).collect()
}

/// Greedy root action of [`exhaustive_search_values`] (lowest index on ties).
pub fn exhaustive_search_action<M: ModelView>(state: usize, model: &M, horizon: usize, budget: usize) -> Result<usize> {
    Ok(greedy_action(&exhaustive_search_values(state, model, horizon, budget)?))
}

struct Node {
    state: usize,
    /// Per expanded action: `(prob, reward, child)` triples.
    edges: Vec<Option<Vec<(f64, f64, usize)>>>,
}

/// Breadth-first expectimax from `state` using `n_s` expansions, where one
/// expansion enumerates the outcomes of one `(node, action)` pair. Actions
/// never expanded are valued by `q`; unexpanded nodes by `max_a q`.
pub fn tree_search_with_bootstrapping<M: ModelView>(state: usize, model: &M, q: &ValueTable, n_s: usize) -> Result<Vec<f64>> {
    if n_s == 0 {
        return Err(Error::invalid("tree search needs at least one expansion"));
    }
    if q.num_states() != model.num_states() || q.num_actions() != model.num_actions() {
        return Err(Error::shape("value table does not match the model"));
    }
    let na = model.num_actions();
    let mut nodes = vec![Node { state, edges: vec![None; na] }];
    let mut frontier = VecDeque::from([0usize]);
    let mut expansions = 0;
    'outer: while let Some(i) = frontier.pop_front() {
        if model.is_terminal(nodes[i].state) {
            continue;
        }
        for a in 0..na {
            if expansions == n_s {
                break 'outer;
            }
            expansions += 1;
            let mut edge = Vec::new();
            for o in model.outcomes(nodes[i].state, a) {
                let child = nodes.len();
                nodes.push(Node { state: o.next, edges: vec![None; na] });
                frontier.push_back(child);
                edge.push((o.prob, o.reward, child));
            }
            nodes[i].edges[a] = Some(edge);
        }
    }
    // Children are created after parents, so a reverse pass sees them first.
    let gamma = model.gamma();
    let mut value = vec![0.0; nodes.len()];
    let mut root = vec![0.0; na];
    for i in (0..nodes.len()).rev() {
        let node = &nodes[i];
        if model.is_terminal(node.state) {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for a in 0..na {
            let v = match &node.edges[a] {
                Some(edge) => edge.iter().map(|&(p, r, c)| p * (r + gamma * value[c])).sum(),
                None => q.q(node.state, a),
            };
            if i == 0 {
                root[a] = v;
            }
            best = best.max(v);
        }
        value[i] = best;
    }
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{self, policy_action_values, value_iteration};
    use crate::gridworld::{build_gridworld, Cell, GridSpec};
    use crate::testutil::{random_mdp, to_mdp};
    use crate::testutil::oracle::{bfs_distances, random_raw_mdp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn deterministic_sg() -> crate::gridworld::GridWorld {
        build_gridworld(&GridSpec { slip: 0.0, ..GridSpec::default() }).unwrap()
    }

    #[test]
    fn rollouts_exact_without_noise() {
        let world = deterministic_sg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pi = Policy::random_deterministic(101, 4, &mut rng);
        let exact = policy_action_values(&world.mdp, &pi).unwrap();
        for s in [0, 17, 44, 98] {
            for n_r in [1, 5] {
                let est = mc_rollout_values(s, &world.mdp, n_r, &pi, 2000, &mut rng);
                for a in 0..4 {
                    assert!((est[a] - exact.q(s, a)).abs() < 1e-9, "state {s} action {a}");
                }
            }
        }
    }

    #[test]
    fn rollouts_converge_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = to_mdp(&random_raw_mdp(&mut rng, 5, 3, 0.8));
        let pi = Policy::uniform(5, 3);
        let exact = policy_action_values(&m, &pi).unwrap();
        let n_r = 20_000;
        // Returns are bounded by 1/(1-γ); use that to bound the standard error.
        let sigma = (1.0 / (1.0 - 0.8)) / (n_r as f64).sqrt();
        let est = mc_rollout_values(0, &m, n_r, &pi, 400, &mut rng);
        for a in 0..3 {
            assert!((est[a] - exact.q(0, a)).abs() < 3.0 * sigma, "action {a}: {} vs {}", est[a], exact.q(0, a));
        }
    }

    #[test]
    fn rollouts_prefer_rewarding_terminal() {
        let (ns, na) = (3, 2);
        let mut p = vec![0.0; ns * na * ns];
        let mut r = vec![0.0; ns * na * ns];
        p[(0 * na) * ns + 1] = 1.0;
        p[(0 * na + 1) * ns + 2] = 1.0;
        r[(0 * na + 1) * ns + 2] = 10.0;
        for s in 1..3 {
            for a in 0..na {
                p[(s * na + a) * ns + s] = 1.0;
            }
        }
        let m = crate::TabularMdp::new(ns, na, p, r, vec![1.0, 0.0, 0.0], vec![false, true, true], 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = mc_rollout_values(0, &m, 10, &Policy::uniform(3, 2), 10, &mut rng);
        assert_eq!(greedy_action(&v), 1);
    }

    #[test]
    fn exhaustive_depth_one_is_immediate_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_mdp(&mut rng, 5, 3, 0.9);
        for s in 0..5 {
            let v = exhaustive_search_values(s, &m, 1, 1000).unwrap();
            for a in 0..3 {
                let expect = if m.is_terminal(s) { 0.0 } else { m.expected_reward(s, a) };
                assert!((v[a] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exhaustive_matches_value_iteration_on_deterministic_grid() {
        let world = deterministic_sg();
        let (q, _) = value_iteration(&world.mdp, dp::DEFAULT_TOL, dp::DEFAULT_MAX_ITERS).unwrap();
        // With γ = 0.9 the truncated tail after 40 steps is below γ^40·10/(1-γ).
        for s in 0..100 {
            let v = exhaustive_search_values(s, &world.mdp, 40, 1_000_000).unwrap();
            assert_eq!(greedy_action(&v), greedy_action(q.row(s)), "state {s}");
        }
    }

    #[test]
    fn exhaustive_traces_shortest_path() {
        let spec = GridSpec { slip: 0.0, ..GridSpec::default() };
        let world = build_gridworld(&spec).unwrap();
        let start = world.state_of(spec.start).unwrap();
        // Oracle distances over the deterministic transition graph.
        let succ = |c: usize| -> Vec<usize> {
            (0..4).filter_map(|a| world.mdp.outcomes(c, a).iter().find(|o| o.prob > 0.0).map(|o| o.next)).collect()
        };
        let adj: Vec<Vec<usize>> = (0..world.num_states()).map(succ).collect();
        let dist = bfs_distances(&adj, start);
        let goal_dist = spec.start.manhattan(spec.goal);
        assert_eq!(dist[world.terminal_state()], Some(goal_dist));
        let mut s = start;
        let mut steps = 0;
        while !world.mdp.is_terminal(s) {
            let a = exhaustive_search_action(s, &world.mdp, 20, 1_000_000).unwrap();
            s = world.mdp.outcomes(s, a)[0].next;
            steps += 1;
            assert!(steps <= goal_dist);
        }
        assert_eq!(steps, goal_dist);
    }

    #[test]
    fn exhaustive_budget_is_enforced() {
        let world = deterministic_sg();
        let err = exhaustive_search_values(0, &world.mdp, 30, 10).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { horizon: 30, budget: 10 }));
        assert!(exhaustive_search_values(0, &world.mdp, 0, 10).is_err());
    }

    #[test]
    fn tree_search_is_fixed_point_at_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let m = random_mdp(&mut rng, 6, 3, 0.9);
            let (q, _) = value_iteration(&m, 1e-13, dp::DEFAULT_MAX_ITERS).unwrap();
            for n_s in [1, 3, 7, 40] {
                for s in 0..6 {
                    let v = tree_search_with_bootstrapping(s, &m, &q, n_s).unwrap();
                    for a in 0..3 {
                        let expect = if m.is_terminal(s) { 0.0 } else { q.q(s, a) };
                        assert!((v[a] - expect).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn one_ply_is_a_single_backup() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_mdp(&mut rng, 5, 3, 0.9);
        let q = ValueTable::from_values(5, 3, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let v = tree_search_with_bootstrapping(0, &m, &q, 3).unwrap();
        for a in 0..3 {
            // Hand backup: E[r + γ max_a' Q(s', a')], terminal successors worth 0.
            let mut expect = 0.0;
            for s2 in 0..5 {
                let p = m.transition(0, a, s2);
                let tail = if m.is_terminal(s2) { 0.0 } else { q.max(s2) };
                expect += p * (m.reward(0, a, s2) + 0.9 * tail);
            }
            assert!((v[a] - expect).abs() < 1e-12);
        }
        // Fewer expansions leave later actions at their table values.
        let partial = tree_search_with_bootstrapping(0, &m, &q, 1).unwrap();
        assert!((partial[0] - v[0]).abs() < 1e-12);
        assert_eq!(&partial[1..], &q.row(0)[1..]);
    }

    #[test]
    fn deep_search_approaches_optimal_values() {
        let world = deterministic_sg();
        let (qstar, _) = value_iteration(&world.mdp, dp::DEFAULT_TOL, dp::DEFAULT_MAX_ITERS).unwrap();
        let zero = ValueTable::zeros(101, 4);
        let s = world.state_of(Cell(4, 3)).unwrap();
        let shallow = tree_search_with_bootstrapping(s, &world.mdp, &zero, 4).unwrap();
        let deep = tree_search_with_bootstrapping(s, &world.mdp, &zero, 4usize.pow(8)).unwrap();
        let err = |v: &[f64]| (0..4).map(|a| (v[a] - qstar.q(s, a)).abs()).fold(0.0, f64::max);
        assert!(err(&deep) < err(&shallow));
        assert_eq!(greedy_action(&deep), greedy_action(qstar.row(s)));
    }

    #[test]
    fn tree_search_rejects_bad_input() {
        let world = deterministic_sg();
        assert!(tree_search_with_bootstrapping(0, &world.mdp, &ValueTable::zeros(101, 4), 0).is_err());
        assert!(tree_search_with_bootstrapping(0, &world.mdp, &ValueTable::zeros(5, 4), 4).is_err());
    }
}
