//! Experiment harness: run both planning styles over many seeds, evaluate
//! their output policies exactly after every episode, classify their models,
//! and write result tables.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{ce_policy, make_block_aggregator, rollout_policy};
use crate::dp::{self, finite_horizon_return, performance};
use crate::error::{Error, Result};
use crate::gridworld::{build_gridworld, make_initial_pdm, make_pp_sequence, make_transposed_task, GridSpec};
use crate::mdp::{ModelView, Policy, TabularMdp};
use crate::model_space::{assess, check_pnm, Reference, TieMode};
use crate::planners::{
    run_episode, AgentConfig, AgentRng, DynaQInterest, LearnedTabularModel, ModernB, ModernDt, Omcp, Planner,
    RewardEstimate,
};
use crate::value::Representation;

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance of the performance-ordering certificates.
pub const CERTIFICATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    /// Fixed hand-designed models, no learning.
    Pp,
    /// Models start as the initial hand-designed model and learn.
    Pl,
    /// As `Pl`, with the task transposed part-way through.
    Tl,
    /// Agents with both a parametric model and a replay buffer.
    MiTabular,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Pp => "pp",
            Setting::Pl => "pl",
            Setting::Tl => "tl",
            Setting::MiTabular => "mi-tabular",
        })
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pp" => Ok(Setting::Pp),
            "pl" => Ok(Setting::Pl),
            "tl" => Ok(Setting::Tl),
            "mi-tabular" => Ok(Setting::MiTabular),
            other => Err(Error::invalid(format!("unknown setting {other:?} (expected pp, pl, tl or mi-tabular)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Style {
    #[serde(rename = "B")]
    Background,
    #[serde(rename = "DT")]
    DecisionTime,
}

impl Style {
    pub const ALL: [Style; 2] = [Style::Background, Style::DecisionTime];

    pub fn label(self) -> &'static str {
        match self {
            Style::Background => "B",
            Style::DecisionTime => "DT",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RepresentationSpec {
    #[default]
    Tabular,
    /// Block state aggregation of the value estimate.
    Blocks { width: usize, height: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metrics {
    Performance,
    TotalReward,
    #[default]
    Both,
}

fn default_runs() -> usize {
    100
}
fn default_switch() -> usize {
    25
}
fn default_pp_models() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub setting: Setting,
    #[serde(default)]
    pub env: GridSpec,
    /// Decision-time agent; defaults depend on the setting.
    #[serde(default)]
    pub dt: Option<AgentConfig>,
    /// Background agent; defaults depend on the setting.
    #[serde(default)]
    pub b: Option<AgentConfig>,
    /// Discount used for evaluation; defaults to the environment's.
    #[serde(default)]
    pub eval_gamma: Option<f64>,
    #[serde(default = "default_runs")]
    pub num_runs: usize,
    /// Episodes per run (models in the sequence for `pp`).
    #[serde(default)]
    pub episodes: Option<usize>,
    #[serde(default = "default_switch")]
    pub tl_switch_episode: usize,
    #[serde(default)]
    pub metrics: Metrics,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub representation: RepresentationSpec,
    #[serde(default = "default_pp_models")]
    pub pp_models: usize,
    /// Enumerate tied optimal policies up to this many when checking the
    /// minimizing / maximizing classes; canonical policy only when unset.
    #[serde(default)]
    pub tie_enumeration: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults for a setting, fully resolved.
    pub fn new(setting: Setting) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            setting,
            env: GridSpec::default(),
            dt: None,
            b: None,
            eval_gamma: None,
            num_runs: default_runs(),
            episodes: None,
            tl_switch_episode: default_switch(),
            metrics: Metrics::Both,
            seed_base: 0,
            representation: RepresentationSpec::Tabular,
            pp_models: default_pp_models(),
            tie_enumeration: None,
        }
        .resolved()
    }

    pub fn default_episodes(setting: Setting) -> usize {
        match setting {
            Setting::Pp => default_pp_models(),
            Setting::Pl => 50,
            Setting::Tl => 50,
            Setting::MiTabular => 600,
        }
    }

    pub fn default_agent(setting: Setting) -> AgentConfig {
        match setting {
            // Rewards of a transition change with the task, so keep the latest.
            Setting::Tl => AgentConfig { reward_estimate: RewardEstimate::Latest, ..AgentConfig::default() },
            _ => AgentConfig::default(),
        }
    }

    /// Fill every defaulted field so the config fully determines a run.
    pub fn resolved(mut self) -> Self {
        let setting = self.setting;
        if self.setting == Setting::Pp {
            self.episodes = Some(self.pp_models);
        }
        self.episodes.get_or_insert(Self::default_episodes(setting));
        self.dt.get_or_insert_with(|| Self::default_agent(setting));
        self.b.get_or_insert_with(|| Self::default_agent(setting));
        self.eval_gamma.get_or_insert(self.env.gamma);
        self
    }

    pub fn episodes(&self) -> usize {
        if self.setting == Setting::Pp {
            return self.pp_models;
        }
        self.episodes.unwrap_or(Self::default_episodes(self.setting))
    }

    pub fn agent(&self, style: Style) -> AgentConfig {
        let slot = match style {
            Style::DecisionTime => &self.dt,
            Style::Background => &self.b,
        };
        slot.clone().unwrap_or_else(|| Self::default_agent(self.setting))
    }

    pub fn eval_gamma(&self) -> f64 {
        self.eval_gamma.unwrap_or(self.env.gamma)
    }

    /// Every problem with the config, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            problems.push(format!("schema_version: expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if let Err(e) = self.env.validate() {
            problems.push(format!("env: {e}"));
        }
        for style in Style::ALL {
            if let Err(e) = self.agent(style).validate() {
                let key = if style == Style::DecisionTime { "dt" } else { "b" };
                problems.push(format!("{key}: {e}"));
            }
        }
        let g = self.eval_gamma();
        if !(0.0..1.0).contains(&g) {
            problems.push(format!("eval_gamma: must lie in [0, 1), got {g}"));
        }
        if self.num_runs == 0 {
            problems.push("num_runs: must be at least 1".into());
        }
        if self.episodes() == 0 {
            problems.push("episodes: must be at least 1".into());
        }
        if self.setting == Setting::Tl && self.tl_switch_episode >= self.episodes() {
            problems.push(format!(
                "tl_switch_episode: must be below episodes ({} >= {})",
                self.tl_switch_episode,
                self.episodes()
            ));
        }
        if self.setting == Setting::Tl && self.env.width != self.env.height {
            problems.push("env: the transfer setting needs a square grid".into());
        }
        if self.pp_models < 2 {
            problems.push("pp_models: must be at least 2".into());
        }
        if let RepresentationSpec::Blocks { width, height } = self.representation {
            if width == 0 || height == 0 {
                problems.push("representation: block dimensions must be at least 1".into());
            }
        }
        if self.tie_enumeration == Some(0) {
            problems.push("tie_enumeration: must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("\n")))
        }
    }

    /// Parse TOML or JSON (chosen by `format`, "toml" or "json").
    pub fn parse(text: &str, format: &str) -> Result<Self> {
        match format {
            "json" => serde_json::from_str(text).map_err(|e| {
                Error::Parse(format!("{e} (byte offset {})", byte_offset(text, e.line(), e.column())))
            }),
            "toml" => toml::from_str(text).map_err(|e| {
                let at = e.span().map(|s| format!(" (byte offset {})", s.start)).unwrap_or_default();
                Error::Parse(format!("{}{at}", e.message()))
            }),
            other => Err(Error::invalid(format!("unknown config format {other:?}"))),
        }
    }

    /// Load a config file; `.json` files are JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let format = if path.extension().is_some_and(|e| e == "json") { "json" } else { "toml" };
        Self::parse(&text, format)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("configs serialize")))
    }
}

/// Byte offset of a 1-based line and column.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    line_start + column.saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub style: Style,
    pub run: usize,
    pub episode: usize,
    pub j_env: f64,
    pub j_model: f64,
    pub total_reward: f64,
    pub is_pcm: bool,
    pub is_prm: bool,
    pub is_pnm: bool,
    pub is_pxm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub style: Style,
    pub episode: usize,
    pub mean_j: f64,
    pub se_j: f64,
    pub mean_total: f64,
    pub se_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttainmentRow {
    pub style: Style,
    pub run: usize,
    /// First episode from which the model stays maximizing; empty if never.
    pub episode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Sorted by style, run, episode.
    pub rows: Vec<RawRow>,
    /// Whether the initial hand-designed model minimizes performance in the
    /// task (learning settings only).
    pub initial_model_is_pnm: Option<bool>,
    /// Exact optimal and minimal performance of the (first) task.
    pub j_opt: f64,
    pub j_min: f64,
}

impl ExperimentResult {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows)
    }

    pub fn attainment(&self) -> Vec<AttainmentRow> {
        pxm_attainment(&self.rows)
    }
}

/// Mean and standard error over runs for each (style, episode).
pub fn summarize(rows: &[RawRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Style, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.style, r.episode)).or_default();
        g.0.push(r.j_env);
        g.1.push(r.total_reward);
    }
    groups
        .into_iter()
        .map(|((style, episode), (j, total))| {
            let (mean_j, se_j) = mean_se(&j);
            let (mean_total, se_total) = mean_se(&total);
            SummaryRow { style, episode, mean_j, se_j, mean_total, se_total }
        })
        .collect()
}

/// Sample mean and standard error (n - 1 denominator; zero for one sample).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per (style, run): first episode after which every snapshot is maximizing.
pub fn pxm_attainment(rows: &[RawRow]) -> Vec<AttainmentRow> {
    let mut out: BTreeMap<(Style, usize), Option<usize>> = BTreeMap::new();
    let mut last: BTreeMap<(Style, usize), usize> = BTreeMap::new();
    for r in rows {
        let key = (r.style, r.run);
        let slot = out.entry(key).or_insert(None);
        if r.is_pxm {
            slot.get_or_insert(r.episode);
        } else {
            *slot = None;
        }
        last.insert(key, r.episode);
    }
    out.into_iter().map(|((style, run), episode)| AttainmentRow { style, run, episode }).collect()
}

/// Performance-ordering certificates. Pure planning: a contrasting model
/// means the rollout output is at least as good in the task as the
/// certainty-equivalence output, a resembling one the reverse. Learning
/// settings: a minimizing background model means the decision-time output is
/// at least as good, a maximizing one the reverse. Returns violations.
pub fn certificate_violations(setting: Setting, rows: &[RawRow]) -> Vec<String> {
    let mut by_key: BTreeMap<(usize, usize), [Option<&RawRow>; 2]> = BTreeMap::new();
    for r in rows {
        by_key.entry((r.run, r.episode)).or_default()[(r.style == Style::DecisionTime) as usize] = Some(r);
    }
    let mut out = Vec::new();
    for ((run, episode), pair) in by_key {
        let (Some(b), Some(dt)) = (pair[0], pair[1]) else { continue };
        let (dt_first, b_first) = match setting {
            Setting::Pp => (b.is_pcm, b.is_prm),
            _ => (b.is_pnm, b.is_pxm),
        };
        if dt_first && dt.j_env < b.j_env - CERTIFICATE_TOL {
            out.push(format!("run {run} episode {episode}: DT {} below B {}", dt.j_env, b.j_env));
        }
        if b_first && b.j_env < dt.j_env - CERTIFICATE_TOL {
            out.push(format!("run {run} episode {episode}: B {} below DT {}", b.j_env, dt.j_env));
        }
    }
    out
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one random stream: 0 = background agent, 1 = decision-time agent,
/// 2 = base policy.
pub fn stream_seed(seed_base: u64, run: usize, stream: u64) -> u64 {
    splitmix64(splitmix64(seed_base) ^ splitmix64((run as u64) << 2 | stream))
}

struct Phase {
    env: Arc<TabularMdp>,
    eval: TabularMdp,
    j_min: f64,
    j_max: f64,
}

impl Phase {
    fn new(env: TabularMdp, eval_gamma: f64) -> Result<Self> {
        let eval = env.with_gamma(eval_gamma)?;
        let reference = Reference::new(&eval)?;
        let (j_min, j_max) = (reference.j_min, reference.j_max);
        Ok(Phase { env: Arc::new(env), eval, j_min, j_max })
    }

    fn reference(&self) -> Reference<'_> {
        Reference { mdp: &self.eval, j_min: self.j_min, j_max: self.j_max }
    }
}

struct Context {
    cfg: ExperimentConfig,
    phases: Vec<Phase>,
    pdm: Arc<TabularMdp>,
    pp_models: Vec<TabularMdp>,
    repr: Representation,
    tie_mode: TieMode,
}

impl Context {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = build_gridworld(&cfg.env)?.mdp;
        let mut phases = vec![Phase::new(env, cfg.eval_gamma())?];
        if cfg.setting == Setting::Tl {
            phases.push(Phase::new(make_transposed_task(&cfg.env)?.1.mdp, cfg.eval_gamma())?);
        }
        let pp_models = if cfg.setting == Setting::Pp {
            make_pp_sequence(&cfg.env, cfg.pp_models)?.into_iter().map(|m| m.world.mdp).collect()
        } else {
            Vec::new()
        };
        let repr = match cfg.representation {
            RepresentationSpec::Tabular => Representation::Tabular,
            RepresentationSpec::Blocks { width, height } => {
                Representation::Aggregated(Arc::new(make_block_aggregator(&cfg.env, width, height)?))
            }
        };
        let tie_mode = cfg.tie_enumeration.map_or(TieMode::Canonical, TieMode::EnumerateTies);
        Ok(Context {
            cfg: cfg.clone(),
            phases,
            pdm: Arc::new(make_initial_pdm(&cfg.env)?.mdp),
            pp_models,
            repr,
            tie_mode,
        })
    }

    fn base_policy(&self, run: usize) -> Policy {
        let mut rng = AgentRng::seed_from_u64(stream_seed(self.cfg.seed_base, run, 2));
        let env = &self.phases[0].env;
        Policy::random_deterministic(env.num_states(), env.num_actions(), &mut rng)
    }

    fn total_reward(&self, env: &TabularMdp, policy: &Policy) -> Result<f64> {
        if self.cfg.metrics == Metrics::Performance {
            return Ok(f64::NAN);
        }
        finite_horizon_return(env, policy, self.cfg.env.max_steps)
    }

    fn run_pp(&self, run: usize) -> Result<Vec<RawRow>> {
        let base = self.base_policy(run);
        let phase = &self.phases[0];
        let reference = phase.reference();
        let mut rows = Vec::new();
        for (i, model) in self.pp_models.iter().enumerate() {
            let (_, report) = assess(model, &reference, &base, &format!("pp-{i}"), self.tie_mode)?;
            let outputs = [
                (Style::Background, ce_policy(model, &self.repr)?),
                (Style::DecisionTime, rollout_policy(model, &base, &self.repr)?),
            ];
            for (style, policy) in outputs {
                rows.push(RawRow {
                    style,
                    run,
                    episode: i,
                    j_env: performance(&phase.eval, &policy)?,
                    j_model: performance(&model.with_gamma(self.cfg.eval_gamma())?, &policy)?,
                    total_reward: self.total_reward(&phase.env, &policy)?,
                    is_pcm: report.is_pcm,
                    is_prm: report.is_prm,
                    is_pnm: report.is_pnm.unwrap_or(false),
                    is_pxm: report.is_pxm.unwrap_or(false),
                });
            }
        }
        Ok(rows)
    }

    fn make_agent(&self, style: Style, run: usize) -> Result<Box<dyn Planner>> {
        let cfg = self.cfg.agent(style);
        let env = Arc::clone(&self.phases[0].env);
        let model = LearnedTabularModel::new(Arc::clone(&self.pdm), Some(env), cfg.reward_estimate)?;
        Ok(match (self.cfg.setting, style) {
            (Setting::MiTabular, Style::DecisionTime) => Box::new(ModernDt::new(model, &self.repr, cfg)?),
            (Setting::MiTabular, Style::Background) => Box::new(ModernB::new(model, &self.repr, cfg)?),
            (_, Style::DecisionTime) => Box::new(Omcp::new(model, self.base_policy(run), self.repr.clone(), cfg)?),
            (_, Style::Background) => Box::new(DynaQInterest::new(model, &self.repr, cfg)?),
        })
    }

    fn run_learning(&self, style: Style, run: usize) -> Result<Vec<RawRow>> {
        let cfg = self.cfg.agent(style);
        let mut agent = self.make_agent(style, run)?;
        let mut rng = AgentRng::seed_from_u64(stream_seed(self.cfg.seed_base, run, style as u64));
        let base = self.base_policy(run);
        let switch = (self.cfg.setting == Setting::Tl).then_some(self.cfg.tl_switch_episode);
        let mut phase = &self.phases[0];
        let mut phase_start = 0;
        let mut rows = Vec::with_capacity(self.cfg.episodes());
        for episode in 0..self.cfg.episodes() {
            if Some(episode) == switch {
                phase = &self.phases[1];
                phase_start = episode;
                agent.set_known_dynamics(Arc::clone(&phase.env))?;
            }
            let eps = cfg.epsilon.value(episode - phase_start);
            run_episode(agent.as_mut(), &phase.env, eps, self.cfg.env.max_steps, &mut rng)?;
            let policy = agent.output_policy()?;
            let snapshot = agent.snapshot().ok_or_else(|| Error::Planner("agent has no model".into()))?;
            let snapshot = snapshot.with_gamma(self.cfg.eval_gamma())?;
            let (_, report) = assess(&snapshot, &phase.reference(), &base, &format!("{style}-{run}-{episode}"), self.tie_mode)?;
            rows.push(RawRow {
                style,
                run,
                episode,
                j_env: performance(&phase.eval, &policy)?,
                j_model: performance(&snapshot, &policy)?,
                total_reward: self.total_reward(&phase.env, &policy)?,
                is_pcm: report.is_pcm,
                is_prm: report.is_prm,
                is_pnm: report.is_pnm.unwrap_or(false),
                is_pxm: report.is_pxm.unwrap_or(false),
            });
        }
        Ok(rows)
    }

    fn run(&self, run: usize) -> Result<Vec<RawRow>> {
        if self.cfg.setting == Setting::Pp {
            return self.run_pp(run);
        }
        let mut rows = Vec::new();
        for style in Style::ALL {
            rows.extend(self.run_learning(style, run).map_err(|e| match e {
                Error::Planner(m) => Error::Planner(format!("{style} run {run}: {m}")),
                Error::NoConvergence { .. } | Error::BudgetExceeded { .. } => {
                    Error::Planner(format!("{style} run {run}: {e}"))
                }
                other => other,
            })?);
        }
        Ok(rows)
    }
}

/// Run every seed of an experiment on a pool of `threads` workers (rayon's
/// default when `None`).
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentResult> {
    let cfg = cfg.clone().resolved();
    let ctx = Context::new(&cfg)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Planner(format!("thread pool: {e}")))?;
    let per_run: Vec<Result<Vec<RawRow>>> = pool.install(|| (0..cfg.num_runs).into_par_iter().map(|r| ctx.run(r)).collect());
    let mut rows = Vec::new();
    for r in per_run {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| (a.style, a.run, a.episode).cmp(&(b.style, b.run, b.episode)));
    let initial_model_is_pnm = match cfg.setting {
        Setting::Pp => None,
        _ => Some(check_pnm(&ctx.pdm.with_gamma(cfg.eval_gamma())?, &ctx.phases[0].eval, ctx.tie_mode)?.holds),
    };
    Ok(ExperimentResult {
        j_opt: ctx.phases[0].j_max,
        j_min: ctx.phases[0].j_min,
        config: cfg,
        rows,
        initial_model_is_pnm,
    })
}

/// Exact optimal and random-policy performance of a task, for plotting.
pub fn reference_lines(env: &TabularMdp) -> Result<(f64, f64)> {
    let opt = dp::max_performance(env)?.0;
    let random = performance(env, &Policy::uniform(env.num_states(), env.num_actions()))?;
    Ok((opt, random))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seed_base: u64,
    pub wall_time_secs: f64,
    pub initial_model_is_pnm: Option<bool>,
    pub j_opt: f64,
    pub j_min: f64,
    /// File name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Write `raw.csv`, `summary.csv` (and `attainment.csv` for the modern
/// setting) plus `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, result: &ExperimentResult, wall_time_secs: f64) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = vec![("raw.csv", csv_bytes(&result.rows)?), ("summary.csv", csv_bytes(&result.summary())?)];
    if result.config.setting == Setting::MiTabular {
        files.push(("attainment.csv", csv_bytes(&result.attainment())?));
    }
    let mut outputs = BTreeMap::new();
    for (name, bytes) in &files {
        std::fs::write(dir.join(name), bytes)?;
        outputs.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: result.config.hash(),
        seed_base: result.config.seed_base,
        config: result.config.clone(),
        wall_time_secs,
        initial_model_is_pnm: result.initial_model_is_pnm,
        j_opt: result.j_opt,
        j_min: result.j_min,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(manifest)
}

/// Read a summary table written by [`write_outputs`].
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<SummaryRow>, csv::Error> = r.deserialize().collect();
    Ok(rows?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(style: Style, run: usize, episode: usize, j: f64) -> RawRow {
        RawRow {
            style,
            run,
            episode,
            j_env: j,
            j_model: j,
            total_reward: j,
            is_pcm: false,
            is_prm: true,
            is_pnm: false,
            is_pxm: false,
        }
    }

    #[test]
    fn summary_statistics() {
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!((m, se), (2.0, 1.0));
        assert_eq!(mean_se(&[4.0]), (4.0, 0.0));
        assert_eq!(mean_se(&[2.5; 7]), (2.5, 0.0));
        let rows = vec![row(Style::DecisionTime, 0, 0, 1.0), row(Style::DecisionTime, 1, 0, 3.0), row(Style::Background, 0, 0, 5.0)];
        let s = summarize(&rows);
        assert_eq!(s[0].style, Style::Background);
        assert_eq!((s[1].mean_j, s[1].se_j), (2.0, 1.0));
    }

    #[test]
    fn attainment_requires_staying_maximizing() {
        let flags = [false, true, false, true, true];
        let rows: Vec<RawRow> = flags
            .iter()
            .enumerate()
            .map(|(e, &f)| RawRow { is_pxm: f, ..row(Style::Background, 0, e, 0.0) })
            .collect();
        assert_eq!(pxm_attainment(&rows)[0].episode, Some(3));
        let never: Vec<RawRow> = (0..3).map(|e| row(Style::Background, 0, e, 0.0)).collect();
        assert_eq!(pxm_attainment(&never)[0].episode, None);
    }

    #[test]
    fn byte_offsets() {
        let text = "ab\ncde\nf";
        assert_eq!(byte_offset(text, 1, 1), 0);
        assert_eq!(byte_offset(text, 2, 2), 4);
        assert_eq!(byte_offset(text, 3, 1), 7);
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = ExperimentConfig::parse("schema_version = 1\nsetting = \"pl\"\nnum_runs = 3\n", "toml").unwrap();
        assert_eq!(cfg.num_runs, 3);
        assert_eq!(cfg.episodes(), 50);
        cfg.validate().unwrap();
        let Err(Error::Parse(msg)) = ExperimentConfig::parse("{\"schema_version\": 1,\n \"setting\": }", "json") else {
            panic!()
        };
        assert!(msg.contains("byte offset"), "{msg}");
        assert!(ExperimentConfig::parse("schema_version = 1\nsetting = \"pl\"\nbogus = 1\n", "toml").is_err());
        let bad = ExperimentConfig {
            schema_version: 2,
            num_runs: 0,
            episodes: Some(10),
            tl_switch_episode: 10,
            ..ExperimentConfig::new(Setting::Tl)
        };
        let Err(Error::Invalid(msg)) = bad.validate() else { panic!() };
        for key in ["schema_version", "num_runs", "tl_switch_episode"] {
            assert!(msg.contains(key), "{msg}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::new(Setting::Tl);
        assert_eq!(cfg.agent(Style::Background).reward_estimate, RewardEstimate::Latest);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn seeds_differ_by_stream_and_run() {
        let a = stream_seed(0, 0, 0);
        assert_ne!(a, stream_seed(0, 0, 1));
        assert_ne!(a, stream_seed(0, 1, 0));
        assert_ne!(a, stream_seed(1, 0, 0));
    }

    #[test]
    fn certificates_flag_violations() {
        let mut b = row(Style::Background, 0, 0, 1.0);
        let dt = row(Style::DecisionTime, 0, 0, 2.0);
        b.is_pxm = true;
        assert_eq!(certificate_violations(Setting::Pl, &[b.clone(), dt.clone()]).len(), 1);
        b.is_pxm = false;
        b.is_pnm = true;
        assert!(certificate_violations(Setting::Pl, &[b, dt]).is_empty());
    }

    #[test]
    fn pp_experiment_shape() {
        let cfg = ExperimentConfig { num_runs: 2, ..ExperimentConfig::new(Setting::Pp) };
        let result = run_experiment(&cfg, Some(1)).unwrap();
        assert_eq!(result.rows.len(), 2 * 2 * 10);
        assert_eq!(result.summary().len(), 20);
        assert!(certificate_violations(Setting::Pp, &result.rows).is_empty());
        let first: Vec<&RawRow> = result.rows.iter().filter(|r| r.episode == 0).collect();
        assert!(first.iter().all(|r| r.is_pnm));
        for r in first.iter().filter(|r| r.style == Style::Background) {
            assert!((r.j_env - result.j_min).abs() < 1e-9);
        }
    }

    #[test]
    fn learning_smoke_is_deterministic() {
        for setting in [Setting::Pl, Setting::Tl, Setting::MiTabular] {
            let cfg = ExperimentConfig {
                num_runs: 2,
                episodes: Some(4),
                tl_switch_episode: 2,
                dt: Some(AgentConfig { rollouts: 3, ..ExperimentConfig::default_agent(setting) }),
                ..ExperimentConfig::new(setting)
            };
            let a = run_experiment(&cfg, Some(1)).unwrap();
            let b = run_experiment(&cfg, Some(2)).unwrap();
            assert_eq!(csv_bytes(&a.rows).unwrap(), csv_bytes(&b.rows).unwrap());
            assert_eq!(a.rows.len(), 2 * 2 * 4);
            assert_eq!(a.initial_model_is_pnm, Some(true));
        }
    }

    #[test]
    fn outputs_and_manifest() {
        let dir = std::env::temp_dir().join(format!("planstyle-exp-{}", std::process::id()));
        let cfg = ExperimentConfig { num_runs: 1, ..ExperimentConfig::new(Setting::Pp) };
        let result = run_experiment(&cfg, Some(1)).unwrap();
        let manifest = write_outputs(&dir, &result, 0.5).unwrap();
        assert_eq!(manifest.outputs.len(), 2);
        let header = std::fs::read_to_string(dir.join("raw.csv")).unwrap();
        assert!(header.starts_with("style,run,episode,j_env,j_model,total_reward,is_pcm,is_prm,is_pnm,is_pxm\n"));
        let summary = read_summary(&dir.join("summary.csv")).unwrap();
        assert_eq!(summary, result.summary());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
