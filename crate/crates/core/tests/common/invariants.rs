//! Invariant checks driven by generated inputs. The property-test target runs
//! them through the `proptest!` macro; the acceptance target runs the same
//! checks through a `TestRunner` and counts cases.

#![allow(dead_code)]

use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use planstyle_core::approx::{aggregated_optimality_sweep, aggregated_q_update, value_iteration_with, StateAggregator};
use planstyle_core::dp::{bellman_optimality_sweep, state_values};
use planstyle_core::model_space::{assess, Reference, TieMode};
use planstyle_core::planners::{to_tabular, CombinedModel, LearnedTabularModel, ReplayBuffer, RewardEstimate, Transition};
use planstyle_core::{ModelView, Policy, Representation, TabularMdp, ValueTable};

use super::oracle::random_raw_mdp;

pub const ROW_TOL: f64 = 1e-9;

/// Seed plus state and action counts.
pub fn sized(max_states: usize, max_actions: usize) -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2..=max_states, 1..=max_actions)
}

pub fn mdp(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> TabularMdp {
    let gamma = rng.gen_range(0.0..0.99);
    let raw = random_raw_mdp(rng, ns, na, gamma);
    TabularMdp::new(raw.ns, raw.na, raw.p, raw.r, raw.d, raw.terminal, raw.gamma).expect("generator produces valid MDPs")
}

/// Same states, actions, terminals and discount as `like`, otherwise independent.
pub fn same_space(rng: &mut ChaCha8Rng, like: &TabularMdp) -> TabularMdp {
    let (ns, na) = (like.num_states(), like.num_actions());
    let mut raw = random_raw_mdp(rng, ns, na, like.gamma());
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            if like.is_terminal(s) {
                raw.p[base..base + ns].iter_mut().for_each(|p| *p = 0.0);
                raw.r[base..base + ns].iter_mut().for_each(|r| *r = 0.0);
                raw.p[base + s] = 1.0;
            }
        }
    }
    TabularMdp::new(ns, na, raw.p, raw.r, like.initial_dist().to_vec(), like.terminal().to_vec(), raw.gamma)
        .expect("terminal rows were made absorbing")
}

fn random_table(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> ValueTable {
    ValueTable::from_values(ns, na, (0..ns * na).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap()
}

fn random_aggregator(rng: &mut ChaCha8Rng, ns: usize) -> Arc<StateAggregator> {
    let k = rng.gen_range(1..=ns);
    let mut mapping: Vec<usize> = (0..ns).map(|s| if s < k { s } else { rng.gen_range(0..k) }).collect();
    // shuffle so the first `k` states are not always singletons
    for i in (1..ns).rev() {
        let j = rng.gen_range(0..=i);
        mapping.swap(i, j);
    }
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for c in mapping.iter_mut() {
        if relabel[*c] == usize::MAX {
            relabel[*c] = next;
            next += 1;
        }
        *c = relabel[*c];
    }
    Arc::new(StateAggregator::from_mapping(1, 1, mapping).unwrap())
}

fn check_rows(m: &impl ModelView, what: &str) -> Result<(), TestCaseError> {
    for s in 0..m.num_states() {
        for a in 0..m.num_actions() {
            let outs = m.outcomes(s, a);
            let sum: f64 = outs.iter().map(|o| o.prob).sum();
            prop_assert!((sum - 1.0).abs() < ROW_TOL, "{what}: row ({s}, {a}) sums to {sum}");
            prop_assert!(outs.iter().all(|o| o.prob >= 0.0 && o.next < m.num_states()), "{what}: bad entry in ({s}, {a})");
            if m.is_terminal(s) {
                prop_assert!(
                    outs.len() == 1 && outs[0].next == s && outs[0].reward == 0.0,
                    "{what}: terminal {s} is not absorbing under action {a}"
                );
            }
        }
    }
    let d: f64 = m.initial_dist().iter().sum();
    prop_assert!((d - 1.0).abs() < ROW_TOL, "{what}: initial distribution sums to {d}");
    Ok(())
}

/// Row stochasticity of generated, learned and combined models.
pub fn rows_are_stochastic((seed, ns, na): (u64, usize, usize)) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = Arc::new(mdp(&mut rng, ns, na));
    check_rows(prior.as_ref(), "generated")?;
    let mut learned = LearnedTabularModel::new(Arc::clone(&prior), None, RewardEstimate::RunningMean).unwrap();
    let mut buffer = ReplayBuffer::new(Some(rng.gen_range(1..50)));
    for _ in 0..rng.gen_range(0..40) {
        let (s, a, next) = (rng.gen_range(0..ns), rng.gen_range(0..na), rng.gen_range(0..ns));
        if prior.is_terminal(s) {
            continue;
        }
        let reward = rng.gen_range(-1.0..1.0);
        learned.update(s, a, reward, next).unwrap();
        buffer.push(Transition { state: s, action: a, reward, next, done: prior.is_terminal(next) });
    }
    check_rows(&learned, "learned")?;
    let combined = CombinedModel::new(&learned, &buffer);
    check_rows(&combined, "combined")?;
    check_rows(&to_tabular(&combined), "materialized")?;
    Ok(())
}

/// Terminal states keep zero value under any policy.
pub fn terminals_are_absorbing((seed, ns, na): (u64, usize, usize)) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mdp(&mut rng, ns, na);
    let policy = Policy::random_deterministic(ns, na, &mut rng);
    let v = state_values(&m, &policy).unwrap();
    for s in (0..ns).filter(|&s| m.is_terminal(s)) {
        prop_assert!(v[s].abs() < 1e-12, "terminal {s} has value {}", v[s]);
    }
    Ok(())
}

/// Optimality sweeps contract in sup norm by the discount, tabular and
/// aggregated alike.
pub fn sweeps_contract((seed, ns, na): (u64, usize, usize)) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mdp(&mut rng, ns, na);
    let (q1, q2) = (random_table(&mut rng, ns, na), random_table(&mut rng, ns, na));
    let (mut t1, mut t2) = (q1.clone(), q2.clone());
    bellman_optimality_sweep(&m, &q1, &mut t1);
    bellman_optimality_sweep(&m, &q2, &mut t2);
    let (before, after) = (q1.sup_distance(&q2), t1.sup_distance(&t2));
    prop_assert!(after <= m.gamma() * before + 1e-12, "tabular: {after} > {} * {before}", m.gamma());

    let agg = random_aggregator(&mut rng, ns);
    let repr = Representation::Aggregated(Arc::clone(&agg));
    let mut a1 = ValueTable::zeros_with(&repr, ns, na).unwrap();
    let mut a2 = a1.clone();
    for s in 0..ns {
        for a in 0..na {
            a1.set(s, a, rng.gen_range(-5.0..5.0));
            a2.set(s, a, rng.gen_range(-5.0..5.0));
        }
    }
    let (mut b1, mut b2) = (a1.clone(), a2.clone());
    aggregated_optimality_sweep(&m, &agg, &a1, &mut b1);
    aggregated_optimality_sweep(&m, &agg, &a2, &mut b2);
    let (before, after) = (a1.sup_distance(&a2), b1.sup_distance(&b2));
    prop_assert!(after <= m.gamma() * before + 1e-12, "aggregated: {after} > {} * {before}", m.gamma());
    Ok(())
}

/// Members of a cluster read identical rows after any updates.
pub fn clusters_share_rows((seed, ns, na): (u64, usize, usize)) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mdp(&mut rng, ns, na);
    let agg = random_aggregator(&mut rng, ns);
    let repr = Representation::Aggregated(Arc::clone(&agg));
    let mut q = ValueTable::zeros_with(&repr, ns, na).unwrap();
    for _ in 0..rng.gen_range(0..30) {
        let (s, a) = (rng.gen_range(0..ns), rng.gen_range(0..na));
        aggregated_q_update(&mut q, s, a, rng.gen_range(-3.0..3.0), rng.gen_range(0.0..1.0)).unwrap();
    }
    let solved = value_iteration_with(&m, q.clone(), 1e-8, 100_000).unwrap();
    for table in [&q, &solved] {
        for s in 0..ns {
            let first = agg.members(agg.cluster_of(s))[0];
            prop_assert_eq!(table.row(s), table.row(first));
        }
    }
    Ok(())
}

/// Every model is contrasting or resembling; minimizing implies contrasting
/// and maximizing implies resembling.
pub fn classes_are_consistent((seed, ns, na): (u64, usize, usize)) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = mdp(&mut rng, ns, na);
    let model = match rng.gen_range(0..4) {
        0 => reference.clone(),
        1 => reference.negated_rewards(),
        _ => same_space(&mut rng, &reference),
    };
    let base = Policy::random_deterministic(ns, na, &mut rng);
    let (_, report) = assess(&model, &Reference::new(&reference).unwrap(), &base, "prop", TieMode::EnumerateTies(64)).unwrap();
    prop_assert!(report.is_pcm || report.is_prm, "neither contrasting nor resembling: {report:?}");
    if report.is_pnm == Some(true) {
        prop_assert!(report.is_pcm, "minimizing but not contrasting: {report:?}");
    }
    if report.is_pxm == Some(true) {
        prop_assert!(report.is_prm, "maximizing but not resembling: {report:?}");
    }
    Ok(())
}
