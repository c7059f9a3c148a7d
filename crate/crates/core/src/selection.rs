//! Pass-dominant survivor selection.
//!
//! SelectQ orders candidates by hidden-verifier pass rate first; the dense
//! robust utility only breaks ties because epsilon stays below 1/R. Invalid
//! or semantic-floor-regressing skills score the -1 sentinel and can never
//! outrank a valid candidate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ProgressAggregate;

/// SelectQ of an invalid candidate.
pub const INVALID_SELECT_Q: f64 = -1.0;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("no evaluations supplied")]
    EmptyInput,
    #[error("component {component} out of range: {value}")]
    ComponentOutOfRange { component: String, value: f64 },
    #[error("candidate {0} is missing a score")]
    MissingScore(String),
    #[error("every candidate is invalid and no previous survivor exists")]
    NoViableSurvivor,
}

/// Per-candidate aggregate over R repeats, ready for survivor selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub skill_id: String,
    pub slot: u32,
    /// pass@1 over the candidate's repeats.
    pub pass_rate: f64,
    pub progress: ProgressAggregate,
    /// Gated SkillQ of the candidate's text.
    pub skill_q: f64,
    /// U = 0.60 F_LCB + 0.20 mean + 0.20 SkillQ.
    pub robust_utility: f64,
    /// B: validity gate (sanitizer-invalid or semantic-floor regression).
    pub invalid: bool,
    pub select_q: f64,
}

/// epsilon = 0.49 / max(R, N_task, 1); the max guards degenerate inputs.
pub fn compute_epsilon(repeats: u32, task_count: u32) -> f64 {
    0.49 / repeats.max(task_count).max(1) as f64
}

/// U = 0.60 F_LCB + 0.20 mean progress + 0.20 SkillQ, clipped to [0, 1].
pub fn compute_robust_utility(
    progress_lcb: f64,
    progress_mean: f64,
    skill_q: f64,
) -> Result<f64, SelectionError> {
    for (value, name) in [
        (progress_lcb, "progress_lcb"),
        (progress_mean, "progress_mean"),
        (skill_q, "skill_q"),
    ] {
        if !(0.0..=1.0).contains(&value) || !value.is_finite() {
            return Err(SelectionError::ComponentOutOfRange {
                component: name.to_string(),
                value,
            });
        }
    }
    Ok((0.60 * progress_lcb + 0.20 * progress_mean + 0.20 * skill_q).clamp(0.0, 1.0))
}

/// B = 1 iff the sanitizer marked the skill invalid, or its gated SkillQ
/// falls more than tau below the carried parent's. The carried parent
/// itself can only be invalidated by the sanitizer, never by its own floor.
pub fn apply_validity_gate(
    candidate_skill_q: f64,
    parent_skill_q: f64,
    sanitizer_invalid: bool,
    is_carried_parent: bool,
    tau: f64,
) -> bool {
    if sanitizer_invalid {
        return true;
    }
    if is_carried_parent {
        return false;
    }
    candidate_skill_q + tau < parent_skill_q
}

/// SelectQ: -1 for invalid candidates, else pass@1 + epsilon * clip(U, 0, 1).
pub fn compute_select_q(pass_rate: f64, robust_utility: f64, invalid: bool, epsilon: f64) -> f64 {
    if invalid {
        INVALID_SELECT_Q
    } else {
        pass_rate + epsilon * robust_utility.clamp(0.0, 1.0)
    }
}

/// Picks the survivor: argmax SelectQ over valid candidates, ties broken by
/// higher pass rate, then higher AgentVarianceQ, then lower slot index.
/// When every candidate is invalid the previous survivor is preserved;
/// without one (the seed generation) there is nothing to fall back to.
pub fn select_survivor(
    evaluations: &[CandidateEvaluation],
    previous_survivor: Option<&str>,
) -> Result<String, SelectionError> {
    if evaluations.is_empty() {
        return Err(SelectionError::EmptyInput);
    }
    let best = evaluations
        .iter()
        .filter(|e| !e.invalid)
        .max_by(|a, b| {
            a.select_q
                .total_cmp(&b.select_q)
                .then(a.pass_rate.total_cmp(&b.pass_rate))
                .then(a.progress.variance_q.total_cmp(&b.progress.variance_q))
                // Lower slot wins ties, so compare reversed.
                .then(b.slot.cmp(&a.slot))
        });
    match best {
        Some(winner) => Ok(winner.skill_id.clone()),
        None => previous_survivor
            .map(str::to_string)
            .ok_or(SelectionError::NoViableSurvivor),
    }
}
