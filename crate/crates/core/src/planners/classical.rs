//! Classical decision-time agents (rollouts, exhaustive search) and
//! background agents (Dyna-Q variants), plus plain Q-learning.

use std::sync::Arc;

use rand::Rng;

use crate::approx::{greedy_from_table, rollout_policy};
use crate::dp::greedy_action;
use crate::error::Result;
use crate::mdp::{sample_outcome, ModelView, Policy, TabularMdp};
use crate::value::{Representation, ValueTable};

use super::model::LearnedTabularModel;
use super::search::{exhaustive_search_values, mc_rollout_values};
use super::{
    epsilon_greedy, lazy_epsilon_greedy, plan_to_convergence, q_learning_update, run_planner, AgentConfig, AgentRng, Planner, Trace,
    Transition, DEFAULT_MAX_STEPS,
};

/// Online Monte-Carlo planning: act on rollout estimates of a fixed base
/// policy inside the learned model.
#[derive(Debug, Clone)]
pub struct Omcp {
    model: LearnedTabularModel,
    base: Policy,
    repr: Representation,
    cfg: AgentConfig,
    output: Policy,
}

impl Omcp {
    pub fn new(model: LearnedTabularModel, base: Policy, repr: Representation, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        base.validate(model.num_states(), model.num_actions())?;
        let output = rollout_policy(&model, &base, &repr)?;
        Ok(Omcp { model, base, repr, cfg, output })
    }

    pub fn model(&self) -> &LearnedTabularModel {
        &self.model
    }
}

impl Planner for Omcp {
    fn act(&mut self, state: usize, epsilon: f64, rng: &mut AgentRng) -> Result<usize> {
        let (model, base, cfg) = (&self.model, &self.base, &self.cfg);
        lazy_epsilon_greedy(model.num_actions(), epsilon, rng, |rng| {
            Ok(mc_rollout_values(state, model, cfg.rollouts, base, cfg.rollout_horizon, rng))
        })
    }

    fn observe(&mut self, t: &Transition, _rng: &mut AgentRng) -> Result<()> {
        self.model.update(t.state, t.action, t.reward, t.next)
    }

    fn end_episode(&mut self, _rng: &mut AgentRng) -> Result<()> {
        self.output = rollout_policy(&self.model, &self.base, &self.repr)?;
        Ok(())
    }

    fn output_policy(&self) -> Result<Policy> {
        Ok(self.output.clone())
    }

    fn snapshot(&self) -> Option<TabularMdp> {
        Some(self.model.snapshot())
    }

    fn set_known_dynamics(&mut self, env: Arc<TabularMdp>) -> Result<()> {
        self.model.set_known_dynamics(env)?;
        self.output = rollout_policy(&self.model, &self.base, &self.repr)?;
        Ok(())
    }
}

/// Acts by depth-limited exhaustive expectimax in the learned model.
#[derive(Debug, Clone)]
pub struct ExhaustiveSearchAgent {
    model: LearnedTabularModel,
    cfg: AgentConfig,
}

impl ExhaustiveSearchAgent {
    pub fn new(model: LearnedTabularModel, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(ExhaustiveSearchAgent { model, cfg })
    }
}

impl Planner for ExhaustiveSearchAgent {
    fn act(&mut self, state: usize, epsilon: f64, rng: &mut AgentRng) -> Result<usize> {
        let (model, cfg) = (&self.model, &self.cfg);
        lazy_epsilon_greedy(model.num_actions(), epsilon, rng, |_| {
            exhaustive_search_values(state, model, cfg.search_horizon, cfg.search_budget)
        })
    }

    fn observe(&mut self, t: &Transition, _rng: &mut AgentRng) -> Result<()> {
        self.model.update(t.state, t.action, t.reward, t.next)
    }

    fn output_policy(&self) -> Result<Policy> {
        let actions = (0..self.model.num_states())
            .map(|s| {
                exhaustive_search_values(s, &self.model, self.cfg.search_horizon, self.cfg.search_budget)
                    .map(|v| greedy_action(&v))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Policy::Deterministic(actions))
    }

    fn snapshot(&self) -> Option<TabularMdp> {
        Some(self.model.snapshot())
    }

    fn set_known_dynamics(&mut self, env: Arc<TabularMdp>) -> Result<()> {
        self.model.set_known_dynamics(env)
    }
}

/// Model-free one-step Q-learning.
#[derive(Debug, Clone)]
pub struct QLearning {
    q: ValueTable,
    gamma: f64,
    alpha: f64,
}

impl QLearning {
    pub fn new(q: ValueTable, gamma: f64, cfg: &AgentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(QLearning { q, gamma, alpha: cfg.step_size })
    }
}

impl Planner for QLearning {
    fn act(&mut self, state: usize, epsilon: f64, rng: &mut AgentRng) -> Result<usize> {
        Ok(epsilon_greedy(self.q.row(state), epsilon, rng))
    }

    fn observe(&mut self, t: &Transition, _rng: &mut AgentRng) -> Result<()> {
        q_learning_update(&mut self.q, t, self.gamma, self.alpha)
    }

    fn output_policy(&self) -> Result<Policy> {
        Ok(greedy_from_table(&self.q))
    }

    fn snapshot(&self) -> Option<TabularMdp> {
        None
    }

    fn q_table(&self) -> Option<&ValueTable> {
        Some(&self.q)
    }
}

/// Dyna-Q: learn from each real step, then replay `planning_steps` simulated
/// steps from previously visited state-action pairs.
#[derive(Debug, Clone)]
pub struct DynaQGeneral {
    model: LearnedTabularModel,
    q: ValueTable,
    cfg: AgentConfig,
    visited: Vec<(usize, usize)>,
    seen: Vec<bool>,
}

impl DynaQGeneral {
    pub fn new(model: LearnedTabularModel, repr: &Representation, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let (ns, na) = (model.num_states(), model.num_actions());
        let q = ValueTable::zeros_with(repr, ns, na)?;
        Ok(DynaQGeneral { model, q, cfg, visited: Vec::new(), seen: vec![false; ns * na] })
    }
}

impl Planner for DynaQGeneral {
    fn act(&mut self, state: usize, epsilon: f64, rng: &mut AgentRng) -> Result<usize> {
        Ok(epsilon_greedy(self.q.row(state), epsilon, rng))
    }

    fn observe(&mut self, t: &Transition, rng: &mut AgentRng) -> Result<()> {
        let (gamma, alpha) = (self.model.gamma(), self.cfg.step_size);
        q_learning_update(&mut self.q, t, gamma, alpha)?;
        self.model.update(t.state, t.action, t.reward, t.next)?;
        let key = t.state * self.model.num_actions() + t.action;
        if !self.seen[key] {
            self.seen[key] = true;
            self.visited.push((t.state, t.action));
        }
        for _ in 0..self.cfg.planning_steps {
            let (s, a) = self.visited[rng.gen_range(0..self.visited.len())];
            let o = sample_outcome(self.model.outcomes(s, a), rng);
            let sim = Transition { state: s, action: a, reward: o.reward, next: o.next, done: self.model.is_terminal(o.next) };
            q_learning_update(&mut self.q, &sim, gamma, alpha)?;
        }
        Ok(())
    }

    fn output_policy(&self) -> Result<Policy> {
        Ok(greedy_from_table(&self.q))
    }

    fn snapshot(&self) -> Option<TabularMdp> {
        Some(self.model.snapshot())
    }

    fn q_table(&self) -> Option<&ValueTable> {
        Some(&self.q)
    }

    fn set_known_dynamics(&mut self, env: Arc<TabularMdp>) -> Result<()> {
        self.model.set_known_dynamics(env)
    }
}

/// Dyna-Q of interest: only the model learns during an episode; after it the
/// value table is planned to convergence in the model.
#[derive(Debug, Clone)]
pub struct DynaQInterest {
    model: LearnedTabularModel,
    q: ValueTable,
    cfg: AgentConfig,
}

impl DynaQInterest {
    pub fn new(model: LearnedTabularModel, repr: &Representation, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let q = ValueTable::zeros_with(repr, model.num_states(), model.num_actions())?;
        Ok(DynaQInterest { model, q, cfg })
    }

    pub fn model(&self) -> &LearnedTabularModel {
        &self.model
    }

    /// Plan to convergence in the current model.
    pub fn plan(&mut self, rng: &mut AgentRng) -> Result<()> {
        plan_to_convergence(&self.model, &mut self.q, &self.cfg, rng)
    }
}

impl Planner for DynaQInterest {
    fn act(&mut self, state: usize, epsilon: f64, rng: &mut AgentRng) -> Result<usize> {
        Ok(epsilon_greedy(self.q.row(state), epsilon, rng))
    }

    fn observe(&mut self, t: &Transition, _rng: &mut AgentRng) -> Result<()> {
        self.model.update(t.state, t.action, t.reward, t.next)
    }

    fn end_episode(&mut self, rng: &mut AgentRng) -> Result<()> {
        self.plan(rng)
    }

    fn output_policy(&self) -> Result<Policy> {
        Ok(greedy_from_table(&self.q))
    }

    fn snapshot(&self) -> Option<TabularMdp> {
        Some(self.model.snapshot())
    }

    fn q_table(&self) -> Option<&ValueTable> {
        Some(&self.q)
    }

    fn set_known_dynamics(&mut self, env: Arc<TabularMdp>) -> Result<()> {
        self.model.set_known_dynamics(env)
    }
}

/// Run online Monte-Carlo planning for `episodes` episodes, seeded by `cfg`.
pub fn run_omcp(env: &TabularMdp, initial_model: LearnedTabularModel, base: Policy, cfg: &AgentConfig, episodes: usize) -> Result<Trace> {
    env.check_same_space(&initial_model)?;
    let mut agent = Omcp::new(initial_model, base, Representation::Tabular, cfg.clone())?;
    run_planner(&mut agent, env, &cfg.epsilon, episodes, DEFAULT_MAX_STEPS, &mut cfg.rng())
}

pub fn run_dyna_q_general(env: &TabularMdp, initial_model: LearnedTabularModel, cfg: &AgentConfig, episodes: usize) -> Result<Trace> {
    env.check_same_space(&initial_model)?;
    let mut agent = DynaQGeneral::new(initial_model, &Representation::Tabular, cfg.clone())?;
    run_planner(&mut agent, env, &cfg.epsilon, episodes, DEFAULT_MAX_STEPS, &mut cfg.rng())
}

pub fn run_dyna_q_interest(env: &TabularMdp, initial_model: LearnedTabularModel, cfg: &AgentConfig, episodes: usize) -> Result<Trace> {
    env.check_same_space(&initial_model)?;
    let mut agent = DynaQInterest::new(initial_model, &Representation::Tabular, cfg.clone())?;
    run_planner(&mut agent, env, &cfg.epsilon, episodes, DEFAULT_MAX_STEPS, &mut cfg.rng())
}
