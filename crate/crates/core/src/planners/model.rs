//! Learned tabular models and the replay-weighted combination used by the
//! modern planners.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ModelView, Outcome, TabularMdp};

use super::replay::ReplayBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardEstimate {
    /// Mean of every observed reward for `(s, a, s')`.
    #[default]
    RunningMean,
    /// The most recent observed reward for `(s, a, s')`.
    Latest,
}

#[derive(Debug, Clone, PartialEq)]
struct Observed {
    next: usize,
    count: u64,
    reward_sum: f64,
    latest: f64,
}

/// Counts and reward statistics per `(s, a, s')`, falling back to a prior
/// model wherever nothing has been observed.
///
/// With known dynamics the transition estimate is the reference model's rows
/// and only rewards are learned.
#[derive(Debug, Clone)]
pub struct LearnedTabularModel {
    prior: Arc<TabularMdp>,
    known: Option<Arc<TabularMdp>>,
    estimate: RewardEstimate,
    observed: Vec<Vec<Observed>>,
    outcomes: Vec<Vec<Outcome>>,
}

impl LearnedTabularModel {
    /// `prior` supplies every unobserved entry; `known` fixes the dynamics.
    pub fn new(prior: Arc<TabularMdp>, known: Option<Arc<TabularMdp>>, estimate: RewardEstimate) -> Result<Self> {
        if let Some(k) = &known {
            prior.check_same_space(k.as_ref())?;
        }
        let n = prior.num_states() * prior.num_actions();
        let mut model = LearnedTabularModel {
            prior,
            known,
            estimate,
            observed: vec![Vec::new(); n],
            outcomes: vec![Vec::new(); n],
        };
        for s in 0..model.num_states() {
            for a in 0..model.num_actions() {
                model.refresh(s, a);
            }
        }
        Ok(model)
    }

    fn dynamics(&self) -> &TabularMdp {
        self.known.as_deref().unwrap_or(&self.prior)
    }

    /// Replace the known dynamics (used when the task changes underneath).
    pub fn set_known_dynamics(&mut self, known: Arc<TabularMdp>) -> Result<()> {
        self.prior.check_same_space(known.as_ref())?;
        self.known = Some(known);
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                self.refresh(s, a);
            }
        }
        Ok(())
    }

    pub fn has_known_dynamics(&self) -> bool {
        self.known.is_some()
    }

    fn observed_reward(&self, o: &Observed) -> f64 {
        match self.estimate {
            RewardEstimate::RunningMean => o.reward_sum / o.count as f64,
            RewardEstimate::Latest => o.latest,
        }
    }

    fn reward_estimate(&self, s: usize, a: usize, next: usize) -> f64 {
        let i = s * self.num_actions() + a;
        match self.observed[i].iter().find(|o| o.next == next) {
            Some(o) => self.observed_reward(o),
            None => self.prior.reward(s, a, next),
        }
    }

    fn refresh(&mut self, s: usize, a: usize) {
        let i = s * self.num_actions() + a;
        let total: u64 = self.observed[i].iter().map(|o| o.count).sum();
        let probs: Vec<(usize, f64)> = if self.known.is_none() && total > 0 {
            let mut v: Vec<(usize, f64)> =
                self.observed[i].iter().map(|o| (o.next, o.count as f64 / total as f64)).collect();
            v.sort_by_key(|(n, _)| *n);
            v
        } else {
            self.dynamics().outcomes(s, a).iter().map(|o| (o.next, o.prob)).collect()
        };
        self.outcomes[i] = probs
            .into_iter()
            .map(|(next, prob)| Outcome { next, prob, reward: self.reward_estimate(s, a, next) })
            .collect();
    }

    /// Record one real transition.
    pub fn update(&mut self, s: usize, a: usize, reward: f64, next: usize) -> Result<()> {
        if s >= self.num_states() || a >= self.num_actions() || next >= self.num_states() {
            return Err(Error::shape(format!("transition ({s}, {a}, {next}) outside the model")));
        }
        let i = s * self.num_actions() + a;
        match self.observed[i].iter_mut().find(|o| o.next == next) {
            Some(o) => {
                o.count += 1;
                o.reward_sum += reward;
                o.latest = reward;
            }
            None => self.observed[i].push(Observed { next, count: 1, reward_sum: reward, latest: reward }),
        }
        self.refresh(s, a);
        Ok(())
    }

    /// Number of real visits to `(s, a)`.
    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.observed[s * self.num_actions() + a].iter().map(|o| o.count).sum()
    }

    pub fn snapshot(&self) -> TabularMdp {
        to_tabular(self)
    }
}

impl ModelView for LearnedTabularModel {
    fn num_states(&self) -> usize {
        self.prior.num_states()
    }
    fn num_actions(&self) -> usize {
        self.prior.num_actions()
    }
    fn gamma(&self) -> f64 {
        self.prior.gamma()
    }
    fn is_terminal(&self, s: usize) -> bool {
        self.dynamics().is_terminal(s)
    }
    fn initial_dist(&self) -> &[f64] {
        self.dynamics().initial_dist()
    }
    fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.outcomes[s * self.num_actions() + a]
    }
}

/// Materialize any model view as a dense MDP.
pub fn to_tabular<M: ModelView>(m: &M) -> TabularMdp {
    let (ns, na) = (m.num_states(), m.num_actions());
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            for o in m.outcomes(s, a) {
                p[base + o.next] = o.prob;
                r[base + o.next] = o.reward;
            }
        }
    }
    let terminal = (0..ns).map(|s| m.is_terminal(s)).collect();
    TabularMdp::new(ns, na, p, r, m.initial_dist().to_vec(), terminal, m.gamma())
        .expect("model views hold valid distributions")
}

/// Expected model of planning that alternates uniform `(s, a)` updates from
/// a parametric model with uniform draws from a replay buffer.
///
/// Per `(s, a)` the two sources are mixed with weights proportional to how
/// often each would select that pair: `1/|S||A|` for the parametric model and
/// `n(s, a)/N` for the buffer.
#[derive(Debug, Clone)]
pub struct CombinedModel {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    terminal: Vec<bool>,
    initial_dist: Vec<f64>,
    outcomes: Vec<Vec<Outcome>>,
}

impl CombinedModel {
    pub fn new<M: ModelView>(parametric: &M, buffer: &ReplayBuffer) -> Self {
        let (ns, na) = (parametric.num_states(), parametric.num_actions());
        // Per-pair empirical (next, count, reward sum).
        let mut emp: Vec<Vec<(usize, u64, f64)>> = vec![Vec::new(); ns * na];
        for t in buffer.iter() {
            let list = &mut emp[t.state * na + t.action];
            match list.iter_mut().find(|e| e.0 == t.next) {
                Some(e) => {
                    e.1 += 1;
                    e.2 += t.reward;
                }
                None => list.push((t.next, 1, t.reward)),
            }
        }
        let total = buffer.len() as f64;
        let uniform = 1.0 / (ns * na) as f64;
        let mut outcomes = Vec::with_capacity(ns * na);
        for s in 0..ns {
            for a in 0..na {
                let list = &mut emp[s * na + a];
                let n_sa: u64 = list.iter().map(|e| e.1).sum();
                if n_sa == 0 {
                    outcomes.push(parametric.outcomes(s, a).to_vec());
                    continue;
                }
                list.sort_by_key(|e| e.0);
                let freq = n_sa as f64 / total;
                let w_param = uniform / (uniform + freq);
                let w_emp = 1.0 - w_param;
                let mut merged: Vec<(usize, f64, f64)> = parametric
                    .outcomes(s, a)
                    .iter()
                    .map(|o| (o.next, w_param * o.prob, w_param * o.prob * o.reward))
                    .collect();
                for &(next, count, reward_sum) in list.iter() {
                    let p = w_emp * count as f64 / n_sa as f64;
                    let r = w_emp * reward_sum / n_sa as f64;
                    match merged.iter_mut().find(|m| m.0 == next) {
                        Some(m) => {
                            m.1 += p;
                            m.2 += r;
                        }
                        None => merged.push((next, p, r)),
                    }
                }
                merged.sort_by_key(|m| m.0);
                outcomes.push(
                    merged
                        .into_iter()
                        .filter(|m| m.1 > 0.0)
                        .map(|(next, prob, mass)| Outcome { next, prob, reward: mass / prob })
                        .collect(),
                );
            }
        }
        CombinedModel {
            num_states: ns,
            num_actions: na,
            gamma: parametric.gamma(),
            terminal: (0..ns).map(|s| parametric.is_terminal(s)).collect(),
            initial_dist: parametric.initial_dist().to_vec(),
            outcomes,
        }
    }
}

impl ModelView for CombinedModel {
    fn num_states(&self) -> usize {
        self.num_states
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }
    fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }
    fn outcomes(&self, s: usize, a: usize) -> &[Outcome] {
        &self.outcomes[s * self.num_actions + a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{build_gridworld, make_initial_pdm, GridSpec};
    use crate::planners::replay::Transition;

    fn sg() -> (Arc<TabularMdp>, Arc<TabularMdp>) {
        let spec = GridSpec::default();
        (
            Arc::new(build_gridworld(&spec).unwrap().mdp),
            Arc::new(make_initial_pdm(&spec).unwrap().mdp),
        )
    }

    #[test]
    fn known_dynamics_learn_rewards_only() {
        let (env, pdm) = sg();
        let mut m = LearnedTabularModel::new(pdm.clone(), Some(env.clone()), RewardEstimate::RunningMean).unwrap();
        assert_eq!(m.snapshot().transition_tensor(), env.transition_tensor());
        assert_eq!(m.snapshot().reward_tensor(), pdm.reward_tensor());
        let r = env.reward(5, 1, 6);
        m.update(5, 1, r, 6).unwrap();
        let snap = m.snapshot();
        assert_eq!(snap.transition_tensor(), env.transition_tensor());
        assert_eq!(snap.reward(5, 1, 6), r);
        assert_eq!(snap.reward(5, 1, 5), pdm.reward(5, 1, 5));
    }

    #[test]
    fn reward_estimators() {
        let (env, pdm) = sg();
        let mut mean = LearnedTabularModel::new(pdm.clone(), Some(env.clone()), RewardEstimate::RunningMean).unwrap();
        let mut latest = LearnedTabularModel::new(pdm, Some(env), RewardEstimate::Latest).unwrap();
        for r in [1.0, 2.0, 6.0] {
            mean.update(5, 1, r, 6).unwrap();
            latest.update(5, 1, r, 6).unwrap();
        }
        assert_eq!(mean.snapshot().reward(5, 1, 6), 3.0);
        assert_eq!(latest.snapshot().reward(5, 1, 6), 6.0);
    }

    #[test]
    fn counted_dynamics_normalize() {
        let (_, pdm) = sg();
        let mut m = LearnedTabularModel::new(pdm.clone(), None, RewardEstimate::RunningMean).unwrap();
        for next in [6, 6, 6, 15] {
            m.update(5, 1, 0.0, next).unwrap();
        }
        let o = m.outcomes(5, 1);
        assert_eq!(o.len(), 2);
        assert_eq!((o[0].next, o[0].prob), (6, 0.75));
        assert_eq!((o[1].next, o[1].prob), (15, 0.25));
        // Unvisited pairs keep the prior row.
        assert_eq!(m.outcomes(7, 0), pdm.outcomes(7, 0));
        assert!(m.update(500, 0, 0.0, 0).is_err());
    }

    #[test]
    fn combined_model_weights() {
        let (env, pdm) = sg();
        let param = LearnedTabularModel::new(pdm, Some(env), RewardEstimate::RunningMean).unwrap();
        let mut buffer = ReplayBuffer::new(None);
        let combined_empty = CombinedModel::new(&param, &buffer);
        assert_eq!(to_tabular(&combined_empty), param.snapshot());
        // One buffer entry: N = 1, n_sa = 1, weight on the model = (1/404) / (1/404 + 1).
        buffer.push(Transition { state: 5, action: 1, reward: 7.0, next: 6, done: false });
        let c = CombinedModel::new(&param, &buffer);
        let w = (1.0 / 404.0) / (1.0 / 404.0 + 1.0);
        let p6 = param.outcomes(5, 1).iter().find(|o| o.next == 6).unwrap().prob;
        let got = c.outcomes(5, 1).iter().find(|o| o.next == 6).unwrap();
        assert!((got.prob - (w * p6 + (1.0 - w))).abs() < 1e-15);
        let sum: f64 = c.outcomes(5, 1).iter().map(|o| o.prob).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        to_tabular(&c);
    }
}
