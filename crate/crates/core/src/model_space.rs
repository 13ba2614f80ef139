//! Classifying a model by how its rollout and certainty-equivalence policies
//! perform in a reference MDP.
//!
//! Orderings compare `J(ce) - J(rollout)` with an absolute tolerance of 1e-9.
//! A model "contrasts" when the policy it prefers is no better in the
//! reference, and "resembles" when it is no worse. A tie in the reference
//! makes a model both. A tie in the model carries no preference of its own and
//! falls back to the construction order (`ce` is never worse than `rollout`).

use serde::{Deserialize, Serialize};

use crate::dp::{self, tied_actions};
use crate::error::Result;
use crate::mdp::{ModelView, Policy, TabularMdp};
use crate::value::ValueTable;

/// Absolute tolerance for performance comparisons between two policies.
pub const ORDER_TOL: f64 = 1e-9;
/// Absolute tolerance for "this policy attains the extremum".
pub const EXTREMUM_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_TIES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub rollout: Policy,
    pub cert_eq: Policy,
    pub base: Policy,
    pub source_model_id: String,
}

pub fn make_policy_pair<M: ModelView>(model: &M, base: &Policy, source_model_id: impl Into<String>) -> Result<PolicyPair> {
    let rollout = dp::one_step_policy_improvement(model, base)?;
    let cert_eq = dp::optimal_policy(model)?;
    Ok(PolicyPair { rollout, cert_eq, base: base.clone(), source_model_id: source_model_id.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum OptimalPolicyCheck {
    CanonicalOnly,
    TieEnumerated { count: usize },
    /// Tie enumeration would have exceeded `max_count`; only the canonical
    /// greedy policy was checked.
    Truncated { count: usize, max_count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieMode {
    Canonical,
    EnumerateTies(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremumEvidence {
    pub holds: bool,
    /// Reference performance of the canonical greedy policy of the model.
    pub j_ref_canonical: f64,
    /// Worst (for maxima) or best (for minima) reference performance over the
    /// checked tie-broken policies.
    pub j_ref_extreme: f64,
    pub j_target: f64,
    pub check: OptimalPolicyCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelClassReport {
    pub is_pcm: bool,
    pub is_prm: bool,
    pub is_pnm: Option<bool>,
    pub is_pxm: Option<bool>,
    pub j_ref_rollout: f64,
    pub j_ref_ce: f64,
    pub j_model_rollout: f64,
    pub j_model_ce: f64,
    pub j_ref_min: f64,
    pub j_ref_max: f64,
    pub optimal_policy_check: OptimalPolicyCheck,
}

fn sign(x: f64) -> i8 {
    if x > ORDER_TOL {
        1
    } else if x < -ORDER_TOL {
        -1
    } else {
        0
    }
}

/// `(contrasting, resembling)` from the two performance differences
/// `J(ce) - J(rollout)` in the model and in the reference.
pub fn order_classes(model_diff: f64, ref_diff: f64) -> (bool, bool) {
    let preferred = if sign(model_diff) >= 0 { 1 } else { -1 };
    let r = sign(ref_diff) * preferred;
    (r <= 0, r >= 0)
}

/// A reference MDP with its extreme performances computed once.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub mdp: &'a TabularMdp,
    pub j_min: f64,
    pub j_max: f64,
}

impl<'a> Reference<'a> {
    pub fn new(mdp: &'a TabularMdp) -> Result<Self> {
        Ok(Reference { mdp, j_min: dp::min_performance(mdp)?.0, j_max: dp::max_performance(mdp)?.0 })
    }
}

fn order_report(model: &TabularMdp, reference: &Reference, pair: &PolicyPair) -> Result<ModelClassReport> {
    model.check_same_space(reference.mdp)?;
    let j_model_rollout = dp::performance(model, &pair.rollout)?;
    let j_model_ce = dp::performance(model, &pair.cert_eq)?;
    let j_ref_rollout = dp::performance(reference.mdp, &pair.rollout)?;
    let j_ref_ce = dp::performance(reference.mdp, &pair.cert_eq)?;
    let (is_pcm, is_prm) = order_classes(j_model_ce - j_model_rollout, j_ref_ce - j_ref_rollout);
    Ok(ModelClassReport {
        is_pcm,
        is_prm,
        is_pnm: None,
        is_pxm: None,
        j_ref_rollout,
        j_ref_ce,
        j_model_rollout,
        j_model_ce,
        j_ref_min: reference.j_min,
        j_ref_max: reference.j_max,
        optimal_policy_check: OptimalPolicyCheck::CanonicalOnly,
    })
}

/// Contrast/resemblance flags plus all performances; extremum flags unset.
pub fn classify(model: &TabularMdp, reference: &TabularMdp, pair: &PolicyPair) -> Result<ModelClassReport> {
    model.check_same_space(reference)?;
    order_report(model, &Reference::new(reference)?, pair)
}

/// Build the policy pair from `base` and produce the full report, with
/// minimizing and maximizing flags. Those classes are, by definition, also
/// contrasting / resembling, so the flags are conjunctions.
pub fn assess(
    model: &TabularMdp,
    reference: &Reference,
    base: &Policy,
    source_model_id: &str,
    tie_mode: TieMode,
) -> Result<(PolicyPair, ModelClassReport)> {
    model.check_same_space(reference.mdp)?;
    let rollout = dp::one_step_policy_improvement(model, base)?;
    let (q, cert_eq) = dp::value_iteration(model, dp::DEFAULT_TOL, dp::DEFAULT_MAX_ITERS)?;
    let pair = PolicyPair { rollout, cert_eq, base: base.clone(), source_model_id: source_model_id.to_string() };
    let mut report = order_report(model, reference, &pair)?;
    let pnm = extremum_evidence(model, &q, &pair.cert_eq, reference.mdp, reference.j_min, tie_mode, true)?;
    let pxm = extremum_evidence(model, &q, &pair.cert_eq, reference.mdp, reference.j_max, tie_mode, false)?;
    report.is_pnm = Some(pnm.holds && report.is_pcm);
    report.is_pxm = Some(pxm.holds && report.is_prm);
    report.optimal_policy_check = match (pnm.check, pxm.check) {
        (t @ OptimalPolicyCheck::Truncated { .. }, _) | (_, t @ OptimalPolicyCheck::Truncated { .. }) => t,
        (c, _) => c,
    };
    Ok((pair, report))
}

/// States where some tied greedy actions have different consequences,
/// with the distinct choices available there.
fn distinct_ties(model: &TabularMdp, q: &ValueTable) -> Vec<(usize, Vec<usize>)> {
    let mut out = Vec::new();
    for s in 0..model.num_states() {
        let mut choices: Vec<usize> = Vec::new();
        for a in tied_actions(q.row(s)) {
            if !choices.iter().any(|&b| model.outcomes(s, b) == model.outcomes(s, a)) {
                choices.push(a);
            }
        }
        if choices.len() > 1 {
            out.push((s, choices));
        }
    }
    out
}

fn extremum_evidence(
    model: &TabularMdp,
    q: &ValueTable,
    canonical: &Policy,
    reference: &TabularMdp,
    j_target: f64,
    tie_mode: TieMode,
    minimum: bool,
) -> Result<ExtremumEvidence> {
    let j_canonical = dp::performance(reference, canonical)?;
    let hits = |j: f64| (j - j_target).abs() <= EXTREMUM_TOL;
    let mut evidence = ExtremumEvidence {
        holds: hits(j_canonical),
        j_ref_canonical: j_canonical,
        j_ref_extreme: j_canonical,
        j_target,
        check: OptimalPolicyCheck::CanonicalOnly,
    };
    let TieMode::EnumerateTies(max_count) = tie_mode else {
        return Ok(evidence);
    };
    let ties = distinct_ties(model, q);
    let count = ties.iter().try_fold(1usize, |acc, (_, c)| acc.checked_mul(c.len()));
    let count = match count {
        Some(c) if c <= max_count => c,
        other => {
            evidence.check = OptimalPolicyCheck::Truncated { count: other.unwrap_or(usize::MAX), max_count };
            return Ok(evidence);
        }
    };
    let Policy::Deterministic(mut actions) = canonical.clone() else {
        unreachable!("greedy policies are deterministic")
    };
    let mut digits = vec![0usize; ties.len()];
    for _ in 0..count {
        for (i, (s, choices)) in ties.iter().enumerate() {
            actions[*s] = choices[digits[i]];
        }
        let j = dp::performance(reference, &Policy::Deterministic(actions.clone()))?;
        evidence.holds &= hits(j);
        let worse = if minimum { j > evidence.j_ref_extreme } else { j < evidence.j_ref_extreme };
        if worse {
            evidence.j_ref_extreme = j;
        }
        for (i, (_, choices)) in ties.iter().enumerate() {
            digits[i] += 1;
            if digits[i] < choices.len() {
                break;
            }
            digits[i] = 0;
        }
    }
    evidence.check = OptimalPolicyCheck::TieEnumerated { count };
    Ok(evidence)
}

fn check_extremum(model: &TabularMdp, reference: &TabularMdp, tie_mode: TieMode, minimum: bool) -> Result<ExtremumEvidence> {
    model.check_same_space(reference)?;
    let (q, canonical) = dp::value_iteration(model, dp::DEFAULT_TOL, dp::DEFAULT_MAX_ITERS)?;
    let j_target = if minimum { dp::min_performance(reference)?.0 } else { dp::max_performance(reference)?.0 };
    extremum_evidence(model, &q, &canonical, reference, j_target, tie_mode, minimum)
}

/// Do the model's optimal policies attain the reference minimum?
pub fn check_pnm(model: &TabularMdp, reference: &TabularMdp, tie_mode: TieMode) -> Result<ExtremumEvidence> {
    check_extremum(model, reference, tie_mode, true)
}

/// Do the model's optimal policies attain the reference maximum?
pub fn check_pxm(model: &TabularMdp, reference: &TabularMdp, tie_mode: TieMode) -> Result<ExtremumEvidence> {
    check_extremum(model, reference, tie_mode, false)
}

impl From<ExtremumEvidence> for bool {
    fn from(e: ExtremumEvidence) -> bool {
        e.holds
    }
}
