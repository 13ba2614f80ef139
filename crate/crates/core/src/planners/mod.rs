//! Decision-time and background planning agents and the loop that runs them
//! against an environment.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::greedy_action;
use crate::error::{Error, Result};
use crate::mdp::{sample_outcome, ModelView, Policy, TabularMdp};
use crate::value::Representation;
use crate::value::ValueTable;

mod classical;
mod model;
mod modern;
mod replay;
mod search;

pub use classical::{
    run_dyna_q_general, run_dyna_q_interest, run_omcp, DynaQGeneral, DynaQInterest, ExhaustiveSearchAgent, Omcp,
    QLearning,
};
pub use model::{to_tabular, CombinedModel, LearnedTabularModel, RewardEstimate};
pub use modern::{run_modern_b_tabular, run_modern_dt_tabular, ModernB, ModernDt};
pub use replay::{ReplayBuffer, Transition};
pub use search::{exhaustive_search_action, exhaustive_search_values, mc_rollout_values, tree_search_with_bootstrapping};

/// Random source owned by each planner run.
pub type AgentRng = ChaCha8Rng;

/// Linear decay from `start` to `end` over `decay_episodes`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.0, decay_episodes: 20 }
    }
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule { start: eps, end: eps, decay_episodes: 0 }
    }

    pub fn value(&self, episode: usize) -> f64 {
        if episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanningMode {
    /// Expected-update sweeps over every state-action pair.
    #[default]
    Sweeps,
    /// Uniformly sampled expected updates with a sliding-window stop rule.
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub epsilon: EpsilonSchedule,
    /// Q-learning step size.
    pub step_size: f64,
    /// Monte-Carlo rollouts per action.
    pub rollouts: usize,
    /// Step cap for simulated rollouts.
    pub rollout_horizon: usize,
    /// Simulated updates per real step (general Dyna-Q).
    pub planning_steps: usize,
    /// Breadth-first expansions for bootstrapped tree search; defaults to |A|.
    pub search_expansions: Option<usize>,
    /// Depth of exhaustive search.
    pub search_horizon: usize,
    pub search_budget: usize,
    pub planning_mode: PlanningMode,
    /// Stop rule for sampled planning.
    pub convergence_tol: f64,
    /// Window for sampled planning; defaults to |S||A|.
    pub convergence_window: Option<usize>,
    pub max_planning_samples: usize,
    /// Replay capacity; `None` keeps everything.
    pub replay_capacity: Option<usize>,
    pub reward_estimate: RewardEstimate,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            epsilon: EpsilonSchedule::default(),
            step_size: 0.1,
            rollouts: 50,
            rollout_horizon: 100,
            planning_steps: 10,
            search_expansions: None,
            search_horizon: 20,
            search_budget: 10_000_000,
            planning_mode: PlanningMode::Sweeps,
            convergence_tol: 1e-4,
            convergence_window: None,
            max_planning_samples: 10_000_000,
            replay_capacity: None,
            reward_estimate: RewardEstimate::RunningMean,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            problems.push(format!("epsilon must lie in [0, 1], got {} -> {}", e.start, e.end));
        }
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            problems.push(format!("step_size must lie in (0, 1], got {}", self.step_size));
        }
        if self.rollouts == 0 {
            problems.push("rollouts must be at least 1".into());
        }
        if self.rollout_horizon == 0 {
            problems.push("rollout_horizon must be at least 1".into());
        }
        if self.search_expansions == Some(0) {
            problems.push("search_expansions must be at least 1".into());
        }
        if self.search_horizon == 0 {
            problems.push("search_horizon must be at least 1".into());
        }
        if !(self.convergence_tol > 0.0) {
            problems.push(format!("convergence_tol must be positive, got {}", self.convergence_tol));
        }
        if self.convergence_window == Some(0) {
            problems.push("convergence_window must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }

    pub fn rng(&self) -> AgentRng {
        AgentRng::seed_from_u64(self.seed)
    }
}

/// Draw `u`; below `epsilon` pick a uniform action, otherwise the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    if u < epsilon {
        rng.gen_range(0..values.len())
    } else {
        greedy_action(values)
    }
}

/// Draw `u` first, then either a uniform action or the greedy action of the
/// lazily computed values. Consumes randomness exactly like
/// [`epsilon_greedy`] followed by `values`.
pub(crate) fn lazy_epsilon_greedy(
    num_actions: usize,
    epsilon: f64,
    rng: &mut AgentRng,
    values: impl FnOnce(&mut AgentRng) -> Result<Vec<f64>>,
) -> Result<usize> {
    let u: f64 = rng.gen();
    if u < epsilon {
        Ok(rng.gen_range(0..num_actions))
    } else {
        Ok(greedy_action(&values(rng)?))
    }
}

/// One-step Q-learning update from a single transition.
pub(crate) fn q_learning_update(q: &mut ValueTable, t: &Transition, gamma: f64, alpha: f64) -> Result<()> {
    let bootstrap = if t.done { 0.0 } else { gamma * q.max(t.next) };
    crate::approx::aggregated_q_update(q, t.state, t.action, t.reward + bootstrap, alpha)
}

/// Sampled expected updates: draw a row and action uniformly, replace the
/// entry by its expected backup, and stop once `window` consecutive updates
/// each changed the table by less than `tol`. Returns the number of samples.
pub fn sampled_planning<M: ModelView, R: Rng + ?Sized>(
    m: &M,
    q: &mut ValueTable,
    tol: f64,
    window: Option<usize>,
    max_samples: usize,
    rng: &mut R,
) -> Result<usize> {
    let (rows, na) = (q.num_rows(), q.num_actions());
    let window = window.unwrap_or(rows * na);
    let mut quiet = 0;
    let mut last = f64::INFINITY;
    for i in 0..max_samples {
        let row = rng.gen_range(0..rows);
        let a = rng.gen_range(0..na);
        let new = {
            let value = |t: usize| q.max(t);
            match q.representation() {
                Representation::Aggregated(agg) => {
                    let members = agg.members(row);
                    members.iter().map(|&s| m.backup(s, a, value)).sum::<f64>() / members.len() as f64
                }
                Representation::Tabular => m.backup(row, a, value),
            }
        };
        let cell = &mut q.rows_mut()[row * na + a];
        last = (new - *cell).abs();
        *cell = new;
        quiet = if last < tol { quiet + 1 } else { 0 };
        if quiet >= window {
            return Ok(i + 1);
        }
    }
    Err(Error::NoConvergence { iterations: max_samples, residual: last })
}

/// Plan in `m` until `q` converges, by sweeps or by sampled updates.
pub(crate) fn plan_to_convergence<M: ModelView>(
    m: &M,
    q: &mut ValueTable,
    cfg: &AgentConfig,
    rng: &mut AgentRng,
) -> Result<()> {
    match cfg.planning_mode {
        PlanningMode::Sweeps => {
            let start = std::mem::replace(q, ValueTable::zeros(0, 0));
            *q = crate::approx::value_iteration_with(m, start, crate::dp::DEFAULT_TOL, crate::dp::DEFAULT_MAX_ITERS)?;
        }
        PlanningMode::Samples => {
            sampled_planning(m, q, cfg.convergence_tol, cfg.convergence_window, cfg.max_planning_samples, rng)?;
        }
    }
    Ok(())
}

/// Sample one environment step.
pub fn env_step<R: Rng + ?Sized>(env: &TabularMdp, state: usize, action: usize, rng: &mut R) -> Transition {
    let o = sample_outcome(env.outcomes(state, action), rng);
    Transition { state, action, reward: o.reward, next: o.next, done: env.is_terminal(o.next) }
}

/// A planning agent interacting with an environment one step at a time.
pub trait Planner: Send {
    fn act(&mut self, state: usize, epsilon: f64, rng: &mut AgentRng) -> Result<usize>;
    fn observe(&mut self, t: &Transition, rng: &mut AgentRng) -> Result<()>;
    /// Work done between episodes (background planning, snapshot refresh).
    fn end_episode(&mut self, _rng: &mut AgentRng) -> Result<()> {
        Ok(())
    }
    /// The policy the agent would commit to, computed exactly in its model.
    fn output_policy(&self) -> Result<Policy>;
    /// The agent's current model as a dense MDP; `None` for model-free agents.
    fn snapshot(&self) -> Option<TabularMdp>;
    fn q_table(&self) -> Option<&ValueTable> {
        None
    }
    /// Replace the known environment dynamics in the agent's model.
    fn set_known_dynamics(&mut self, _env: Arc<TabularMdp>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub steps: usize,
    pub total_reward: f64,
    pub transitions: Vec<Transition>,
}

/// Run one episode of at most `max_steps` steps.
pub fn run_episode(
    planner: &mut dyn Planner,
    env: &TabularMdp,
    epsilon: f64,
    max_steps: usize,
    rng: &mut AgentRng,
) -> Result<EpisodeOutcome> {
    let mut s = env.sample_initial(rng);
    let mut transitions = Vec::new();
    let mut total_reward = 0.0;
    for _ in 0..max_steps {
        if env.is_terminal(s) {
            break;
        }
        let a = planner.act(s, epsilon, rng)?;
        let t = env_step(env, s, a, rng);
        planner.observe(&t, rng)?;
        total_reward += t.reward;
        transitions.push(t);
        s = t.next;
    }
    planner.end_episode(rng)?;
    Ok(EpisodeOutcome { steps: transitions.len(), total_reward, transitions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSnapshot {
    pub episode: usize,
    pub outcome: EpisodeOutcome,
    pub policy: Policy,
    pub model: Option<TabularMdp>,
    pub q: Option<ValueTable>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub episodes: Vec<EpisodeSnapshot>,
}

/// Run `episodes` episodes and snapshot the agent after each one.
pub fn run_planner(
    planner: &mut dyn Planner,
    env: &TabularMdp,
    schedule: &EpsilonSchedule,
    episodes: usize,
    max_steps: usize,
    rng: &mut AgentRng,
) -> Result<Trace> {
    let mut trace = Trace::default();
    for episode in 0..episodes {
        let outcome = run_episode(planner, env, schedule.value(episode), max_steps, rng)?;
        trace.episodes.push(EpisodeSnapshot {
            episode,
            outcome,
            policy: planner.output_policy()?,
            model: planner.snapshot(),
            q: planner.q_table().cloned(),
        });
    }
    Ok(trace)
}

/// Episode cap used by the `run_*` helpers.
pub const DEFAULT_MAX_STEPS: usize = 100;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_linearly() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(10), 0.5);
        assert_eq!(s.value(20), 0.0);
        assert_eq!(s.value(500), 0.0);
        assert_eq!(EpsilonSchedule::constant(0.05).value(3), 0.05);
    }

    #[test]
    fn config_validation_collects_problems() {
        let bad = AgentConfig { step_size: 0.0, rollouts: 0, search_expansions: Some(0), ..Default::default() };
        let Err(Error::Invalid(msg)) = bad.validate() else { panic!() };
        assert!(msg.contains("step_size") && msg.contains("rollouts") && msg.contains("search_expansions"));
        AgentConfig::default().validate().unwrap();
    }

    #[test]
    fn config_round_trips() {
        let cfg = AgentConfig { planning_mode: PlanningMode::Samples, replay_capacity: Some(5), ..Default::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<AgentConfig>(&text).unwrap(), cfg);
        let partial: AgentConfig = serde_json::from_str(r#"{"rollouts": 7}"#).unwrap();
        assert_eq!(partial.rollouts, 7);
        assert!(serde_json::from_str::<AgentConfig>(r#"{"rolouts": 7}"#).is_err());
    }

    #[test]
    fn greedy_when_epsilon_zero() {
        let mut rng = AgentRng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(epsilon_greedy(&[0.0, 2.0, 2.0, 1.0], 0.0, &mut rng), 1);
        }
    }
}
