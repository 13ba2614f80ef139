//! Finite Markov decision processes and policies over them.
//!
//! [`TabularMdp`] keeps the dense `P[s][a][s']` / `R[s][a][s']` tensors for
//! serialization and a sparse outcome list per `(s, a)` for the solvers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability / reward tolerance used by every structural check.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// One possible result of taking an action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Read access shared by exact MDPs and learned models.
pub trait ModelView: Sync {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn is_terminal(&self, s: usize) -> bool;
    fn initial_dist(&self) -> &[f64];
    /// Outcomes with nonzero probability, in increasing `next` order.
    fn outcomes(&self, s: usize, a: usize) -> &[Outcome];

    /// `Σ p·(r + γ·value(s'))`.
    fn backup(&self, s: usize, a: usize, value: impl Fn(usize) -> f64) -> f64
    where
        Self: Sized,
    {
        let gamma = self.gamma();
        self.outcomes(s, a)
            .iter()
            .map(|o| o.prob * (o.reward + gamma * value(o.next)))
            .sum()
    }

    fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.outcomes(s, a).iter().map(|o| o.prob * o.reward).sum()
    }
}

/// Draw one outcome; the last entry absorbs rounding slack.
pub fn sample_outcome<'a, R: Rng + ?Sized>(outcomes: &'a [Outcome], rng: &mut R) -> &'a Outcome {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for o in outcomes {
        acc += o.prob;
        if u < acc {
            return o;
        }
    }
    outcomes.last().expect("outcome list is never empty")
}

/// Nested-array document used for JSON files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    pub terminal: Vec<bool>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    outcomes: Vec<Vec<Outcome>>,
}

impl TabularMdp {
    /// Build from flat row-major tensors (`index = (s * A + a) * S + s'`).
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
        terminal: Vec<bool>,
        gamma: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::invalid("num_states and num_actions must be positive"));
        }
        let n = num_states * num_actions * num_states;
        if transition.len() != n || reward.len() != n {
            return Err(Error::invalid(format!(
                "transition/reward tensors need {n} entries, got {}/{}",
                transition.len(),
                reward.len()
            )));
        }
        if initial_dist.len() != num_states || terminal.len() != num_states {
            return Err(Error::invalid("initial_dist and terminal need one entry per state"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if let Some(x) = transition.iter().chain(&reward).chain(&initial_dist).find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite tensor entry {x}")));
        }
        if let Some(p) = transition.iter().chain(&initial_dist).find(|p| **p < 0.0 || **p > 1.0 + STOCHASTIC_TOL) {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        let d_sum: f64 = initial_dist.iter().sum();
        if (d_sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!("initial distribution sums to {d_sum}")));
        }
        let mut outcomes = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                let base = (s * num_actions + a) * num_states;
                let row = &transition[base..base + num_states];
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::invalid(format!("transition row ({s}, {a}) sums to {sum}")));
                }
                if terminal[s] {
                    if (row[s] - 1.0).abs() > STOCHASTIC_TOL || reward[base + s] != 0.0 {
                        return Err(Error::invalid(format!(
                            "terminal state {s} must self-loop with reward 0 under action {a}"
                        )));
                    }
                }
                let list: Vec<Outcome> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(next, &prob)| Outcome { next, prob, reward: reward[base + next] })
                    .collect();
                outcomes.push(list);
            }
        }
        Ok(TabularMdp { num_states, num_actions, transition, reward, initial_dist, terminal, gamma, outcomes })
    }

    fn index(&self, s: usize, a: usize, next: usize) -> usize {
        (s * self.num_actions + a) * self.num_states + next
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[self.index(s, a, next)]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.index(s, a, next)]
    }

    pub fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_tensor(&self) -> &[f64] {
        &self.reward
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    /// Same dynamics with a different reward tensor.
    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Self> {
        TabularMdp::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            reward,
            self.initial_dist.clone(),
            self.terminal.clone(),
            self.gamma,
        )
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        TabularMdp::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.reward.clone(),
            self.initial_dist.clone(),
            self.terminal.clone(),
            gamma,
        )
    }

    pub fn negated_rewards(&self) -> Self {
        self.with_rewards(self.reward.iter().map(|r| -r).collect())
            .expect("negating rewards preserves validity")
    }

    /// Errors unless `other` has the same state and action counts.
    pub fn check_same_space(&self, other: &impl ModelView) -> Result<()> {
        if self.num_states != other.num_states() || self.num_actions != other.num_actions() {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{} (states x actions)",
                self.num_states,
                self.num_actions,
                other.num_states(),
                other.num_actions()
            )));
        }
        Ok(())
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (s, &p) in self.initial_dist.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = s;
                if u < acc {
                    return s;
                }
            }
        }
        last
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("MDP serialization cannot fail")
    }
}

impl ModelView for TabularMdp {
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

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let (ns, na) = (doc.num_states, doc.num_actions);
        let flatten = |name: &str, t: Vec<Vec<Vec<f64>>>| -> Result<Vec<f64>> {
            if t.len() != ns || t.iter().any(|r| r.len() != na || r.iter().any(|x| x.len() != ns)) {
                return Err(Error::invalid(format!("{name} must have shape [{ns}][{na}][{ns}]")));
            }
            Ok(t.into_iter().flatten().flatten().collect())
        };
        let transition = flatten("transition", doc.transition)?;
        let reward = flatten("reward", doc.reward)?;
        TabularMdp::new(ns, na, transition, reward, doc.initial_dist, doc.terminal, doc.gamma)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        let nest = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            flat.chunks(m.num_actions * m.num_states)
                .map(|sa| sa.chunks(m.num_states).map(|row| row.to_vec()).collect())
                .collect()
        };
        MdpDocument {
            num_states: m.num_states,
            num_actions: m.num_actions,
            transition: nest(&m.transition),
            reward: nest(&m.reward),
            initial_dist: m.initial_dist.clone(),
            terminal: m.terminal.clone(),
            gamma: m.gamma,
        }
    }
}

/// A state-to-action mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "table", rename_all = "lowercase")]
pub enum Policy {
    Deterministic(Vec<usize>),
    Stochastic(Vec<Vec<f64>>),
}

impl Policy {
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Policy::Stochastic(vec![vec![1.0 / num_actions as f64; num_actions]; num_states])
    }

    /// One uniformly drawn action per state, fixed thereafter.
    pub fn random_deterministic<R: Rng + ?Sized>(num_states: usize, num_actions: usize, rng: &mut R) -> Self {
        Policy::Deterministic((0..num_states).map(|_| rng.gen_range(0..num_actions)).collect())
    }

    pub fn num_states(&self) -> usize {
        match self {
            Policy::Deterministic(t) => t.len(),
            Policy::Stochastic(t) => t.len(),
        }
    }

    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        if self.num_states() != num_states {
            return Err(Error::shape(format!(
                "policy covers {} states, model has {num_states}",
                self.num_states()
            )));
        }
        match self {
            Policy::Deterministic(t) => {
                if let Some((s, a)) = t.iter().enumerate().find(|(_, &a)| a >= num_actions) {
                    return Err(Error::shape(format!("action {a} at state {s} out of range")));
                }
            }
            Policy::Stochastic(t) => {
                for (s, row) in t.iter().enumerate() {
                    if row.len() != num_actions {
                        return Err(Error::shape(format!("policy row {s} has {} actions", row.len())));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > STOCHASTIC_TOL || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return Err(Error::invalid(format!("policy row {s} is not a distribution")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        match self {
            Policy::Deterministic(t) => f64::from(u8::from(t[s] == a)),
            Policy::Stochastic(t) => t[s][a],
        }
    }

    /// The chosen action of a deterministic policy.
    pub fn action(&self, s: usize) -> Option<usize> {
        match self {
            Policy::Deterministic(t) => Some(t[s]),
            Policy::Stochastic(_) => None,
        }
    }

    /// Weighted actions with nonzero probability.
    pub fn support(&self, s: usize) -> Vec<(usize, f64)> {
        match self {
            Policy::Deterministic(t) => vec![(t[s], 1.0)],
            Policy::Stochastic(t) => t[s].iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect(),
        }
    }

    /// Deterministic policies consume no randomness.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        match self {
            Policy::Deterministic(t) => t[s],
            Policy::Stochastic(t) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut last = 0;
                for (a, &p) in t[s].iter().enumerate() {
                    if p > 0.0 {
                        acc += p;
                        last = a;
                        if u < acc {
                            return a;
                        }
                    }
                }
                last
            }
        }
    }
}
