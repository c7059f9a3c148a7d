//! Dense score formulas: pass rate, skill quality with its retention gate,
//! per-rollout progress, repeat-robust aggregation, and repeat stability.
//!
//! Each formula clips its result to [0, 1] after evaluation. The component
//! estimators live in [`components`]; calibration statistics in
//! [`calibration`].

pub mod calibration;
pub mod components;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::VerifierOutcome;
pub use components::{
    estimate_progress_components, EstimatorContext, ProgressComponents, ProgressEstimator,
    RuleSkillEstimator, SkillComponentEstimator, SkillComponents, SkillScoringInput,
    TraceProgressEstimator,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("expected {expected} scores, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("component {component} out of range: {value}")]
    ComponentOutOfRange { component: String, value: f64 },
    #[error("negative sigma: {0}")]
    NegativeSigma(f64),
    #[error("incomplete rollout: {0}")]
    IncompleteRollout(String),
}

fn clip01(value: f64) -> f64 {
    value.clamp(0.0, 1.0)
}

/// Mean of final hidden-verifier results. Runtime feedback never contributes;
/// only final outcomes are accepted as input.
pub fn compute_pass_rate(outcomes: &[VerifierOutcome]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sum: f64 = outcomes.iter().map(VerifierOutcome::reward).sum();
    Ok(sum / outcomes.len() as f64)
}

/// Raw and gated skill-content quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillQ {
    pub raw: f64,
    pub gated: f64,
}

/// raw = 0.35 L + 0.30 G + 0.10 R_p + 0.15 A_act + 0.05 V_s + 0.03 N + 0.02 D;
/// gated = raw * (0.55 + 0.45 V_s) * M_keep. Both clipped to [0, 1].
pub fn compute_skill_q(c: &SkillComponents) -> Result<SkillQ, MetricsError> {
    c.validate()?;
    let raw = 0.35 * c.lesson_coverage
        + 0.30 * c.grounding
        + 0.10 * c.parent_retention
        + 0.15 * c.actionability
        + 0.05 * c.safety_validity
        + 0.03 * c.non_redundancy
        + 0.02 * c.mutation_conservatism;
    let raw = clip01(raw);
    let gated = clip01(raw * (0.55 + 0.45 * c.safety_validity) * c.retention_gate);
    Ok(SkillQ { raw, gated })
}

/// F_base = 0.40 V + 0.20 X + 0.15 H + 0.15 E + 0.10 eta;
/// F_progress = F_base * (0.55 + 0.45 P_path). Clipped to [0, 1].
pub fn compute_progress(c: &ProgressComponents) -> Result<f64, MetricsError> {
    c.validate()?;
    let base = 0.40 * c.verifier_progress
        + 0.20 * c.execution_phase
        + 0.15 * c.harness_alignment
        + 0.15 * c.edit_quality
        + 0.10 * c.efficiency;
    Ok(clip01(base * (0.55 + 0.45 * c.path_grounding)))
}

/// Repeat-aggregated progress summary for one candidate skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressAggregate {
    /// Per-repeat F_progress scores, in repeat order.
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (divide by R).
    pub stddev: f64,
    /// F_LCB = max(0, mean - 1.96 sigma / sqrt(R)).
    pub lcb: f64,
    /// Q_agent_prog = 0.80 F_LCB + 0.20 mean.
    pub progress_q: f64,
    /// Q_agent_var = 1 - min(1, sigma / 0.30).
    pub variance_q: f64,
}

/// Aggregates per-repeat progress scores into the LCB-weighted summary.
pub fn aggregate_progress(scores: &[f64], repeats: u32) -> Result<ProgressAggregate, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if scores.len() != repeats as usize {
        return Err(MetricsError::LengthMismatch {
            expected: repeats as usize,
            got: scores.len(),
        });
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let stddev = variance.sqrt();
    let lcb = (mean - 1.96 * stddev / n.sqrt()).max(0.0);
    let progress_q = 0.80 * lcb + 0.20 * mean;
    let variance_q = compute_variance_q(stddev)?;
    Ok(ProgressAggregate {
        scores: scores.to_vec(),
        mean,
        stddev,
        lcb,
        progress_q,
        variance_q,
    })
}

/// Repeat-stability diagnostic: 1 - min(1, sigma / 0.30).
pub fn compute_variance_q(sigma: f64) -> Result<f64, MetricsError> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(MetricsError::NegativeSigma(sigma));
    }
    Ok(1.0 - (sigma / 0.30).min(1.0))
}
