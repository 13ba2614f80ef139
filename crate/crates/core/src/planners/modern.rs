//! Tabular decision-time and background agents that keep both a parametric
//! model and a replay buffer.

use std::sync::Arc;

use crate::approx::greedy_from_table;
use crate::dp::greedy_action;
use crate::error::{Error, Result};
use crate::mdp::{ModelView, Policy, TabularMdp};
use crate::value::{Representation, ValueTable};

use super::model::{to_tabular, CombinedModel, LearnedTabularModel};
use super::replay::ReplayBuffer;
use super::search::tree_search_with_bootstrapping;
use super::{
    epsilon_greedy, lazy_epsilon_greedy, plan_to_convergence, q_learning_update, run_planner, AgentConfig, AgentRng, Planner, Trace,
    Transition, DEFAULT_MAX_STEPS,
};

/// Acts by bootstrapped breadth-first search in the parametric model; each
/// real step adds to the buffer, and one replayed transition then updates both
/// the value table and the parametric model.
#[derive(Debug, Clone)]
pub struct ModernDt {
    model: LearnedTabularModel,
    buffer: ReplayBuffer,
    q: ValueTable,
    cfg: AgentConfig,
    expansions: usize,
    output: Policy,
}

impl ModernDt {
    pub fn new(model: LearnedTabularModel, repr: &Representation, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let q = ValueTable::zeros_with(repr, model.num_states(), model.num_actions())?;
        let expansions = cfg.search_expansions.unwrap_or(model.num_actions());
        let mut agent = ModernDt {
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            model,
            q,
            cfg,
            expansions,
            output: Policy::Deterministic(Vec::new()),
        };
        agent.output = agent.search_policy()?;
        Ok(agent)
    }

    fn search_policy(&self) -> Result<Policy> {
        let actions = (0..self.model.num_states())
            .map(|s| tree_search_with_bootstrapping(s, &self.model, &self.q, self.expansions).map(|v| greedy_action(&v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Policy::Deterministic(actions))
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn combined_model(&self) -> CombinedModel {
        CombinedModel::new(&self.model, &self.buffer)
    }
}

impl Planner for ModernDt {
    fn act(&mut self, state: usize, epsilon: f64, rng: &mut AgentRng) -> Result<usize> {
        let (model, q, n_s) = (&self.model, &self.q, self.expansions);
        lazy_epsilon_greedy(model.num_actions(), epsilon, rng, |_| tree_search_with_bootstrapping(state, model, q, n_s))
    }

    fn observe(&mut self, t: &Transition, rng: &mut AgentRng) -> Result<()> {
        self.buffer.push(*t);
        let Some(x) = self.buffer.sample(rng).copied() else {
            return Ok(());
        };
        q_learning_update(&mut self.q, &x, self.model.gamma(), self.cfg.step_size)?;
        self.model.update(x.state, x.action, x.reward, x.next)
    }

    fn end_episode(&mut self, _rng: &mut AgentRng) -> Result<()> {
        self.output = self.search_policy()?;
        Ok(())
    }

    fn output_policy(&self) -> Result<Policy> {
        Ok(self.output.clone())
    }

    fn snapshot(&self) -> Option<TabularMdp> {
        Some(to_tabular(&self.combined_model()))
    }

    fn q_table(&self) -> Option<&ValueTable> {
        Some(&self.q)
    }

    fn set_known_dynamics(&mut self, env: Arc<TabularMdp>) -> Result<()> {
        self.model.set_known_dynamics(env)?;
        self.output = self.search_policy()?;
        Ok(())
    }
}

/// Acts greedily on its value table; between episodes plans to convergence
/// in the mixture of the parametric model and the replay buffer that
/// alternating uniform model updates and uniform replay updates target.
#[derive(Debug, Clone)]
pub struct ModernB {
    model: LearnedTabularModel,
    buffer: ReplayBuffer,
    q: ValueTable,
    cfg: AgentConfig,
}

impl ModernB {
    pub fn new(model: LearnedTabularModel, repr: &Representation, cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let q = ValueTable::zeros_with(repr, model.num_states(), model.num_actions())?;
        Ok(ModernB { buffer: ReplayBuffer::new(cfg.replay_capacity), model, q, cfg })
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn combined_model(&self) -> CombinedModel {
        CombinedModel::new(&self.model, &self.buffer)
    }

    pub fn plan(&mut self, rng: &mut AgentRng) -> Result<()> {
        let combined = self.combined_model();
        plan_to_convergence(&combined, &mut self.q, &self.cfg, rng)
    }
}

impl Planner for ModernB {
    fn act(&mut self, state: usize, epsilon: f64, rng: &mut AgentRng) -> Result<usize> {
        Ok(epsilon_greedy(self.q.row(state), epsilon, rng))
    }

    fn observe(&mut self, t: &Transition, _rng: &mut AgentRng) -> Result<()> {
        self.model.update(t.state, t.action, t.reward, t.next)?;
        self.buffer.push(*t);
        Ok(())
    }

    fn end_episode(&mut self, rng: &mut AgentRng) -> Result<()> {
        self.plan(rng)
    }

    fn output_policy(&self) -> Result<Policy> {
        Ok(greedy_from_table(&self.q))
    }

    fn snapshot(&self) -> Option<TabularMdp> {
        Some(to_tabular(&self.combined_model()))
    }

    fn q_table(&self) -> Option<&ValueTable> {
        Some(&self.q)
    }

    fn set_known_dynamics(&mut self, env: Arc<TabularMdp>) -> Result<()> {
        self.model.set_known_dynamics(env)
    }
}

fn check_initial(env: &TabularMdp, model: &LearnedTabularModel) -> Result<()> {
    env.check_same_space(model)?;
    if !model.has_known_dynamics() {
        return Err(Error::invalid("modern planners expect a model with known dynamics"));
    }
    Ok(())
}

pub fn run_modern_dt_tabular(env: &TabularMdp, model: LearnedTabularModel, cfg: &AgentConfig, episodes: usize) -> Result<Trace> {
    check_initial(env, &model)?;
    let mut agent = ModernDt::new(model, &Representation::Tabular, cfg.clone())?;
    run_planner(&mut agent, env, &cfg.epsilon, episodes, DEFAULT_MAX_STEPS, &mut cfg.rng())
}

pub fn run_modern_b_tabular(env: &TabularMdp, model: LearnedTabularModel, cfg: &AgentConfig, episodes: usize) -> Result<Trace> {
    check_initial(env, &model)?;
    let mut agent = ModernB::new(model, &Representation::Tabular, cfg.clone())?;
    run_planner(&mut agent, env, &cfg.epsilon, episodes, DEFAULT_MAX_STEPS, &mut cfg.rng())
}
