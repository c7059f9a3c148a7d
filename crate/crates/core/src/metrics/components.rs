//! Dense component vectors and their deterministic trace/text estimators.
//!
//! The weighted combinations live in [`crate::metrics`]; this module decides
//! what the raw component values are. The estimators are deterministic so
//! identical traces always yield identical scores, and they sit behind small
//! interfaces so a judge-model estimator can replace them without touching
//! any formula code.

use serde::{Deserialize, Serialize};

use crate::domain::{
    ExecutionContract, LessonBank, LessonTag, RolloutRecord, Skill, ToolKind,
};
use crate::metrics::MetricsError;
use crate::sanitizer::SanitizerReport;
use crate::text::{
    self, body_lines, coverage_fraction, extract_path_tokens, is_actionable, jaccard_similarity,
    KeywordMatcher,
};

/// Per-rollout execution components, all clipped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ProgressComponents {
    /// V: verifier or partial-verifier progress.
    pub verifier_progress: f64,
    /// X: execution phase reached, scaled to [0, 1].
    pub execution_phase: f64,
    /// H: alignment with visible harness conventions.
    pub harness_alignment: f64,
    /// E: edit quality.
    pub edit_quality: f64,
    /// eta: turn efficiency.
    pub efficiency: f64,
    /// P_path: grounding of edits on declared target paths.
    pub path_grounding: f64,
}

impl ProgressComponents {
    pub fn all(value: f64) -> Self {
        Self {
            verifier_progress: value,
            execution_phase: value,
            harness_alignment: value,
            edit_quality: value,
            efficiency: value,
            path_grounding: value,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.verifier_progress,
            self.execution_phase,
            self.harness_alignment,
            self.edit_quality,
            self.efficiency,
            self.path_grounding,
        ]
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for (value, name) in self.as_array().iter().zip([
            "verifier_progress",
            "execution_phase",
            "harness_alignment",
            "edit_quality",
            "efficiency",
            "path_grounding",
        ]) {
            if !(0.0..=1.0).contains(value) || !value.is_finite() {
                return Err(MetricsError::ComponentOutOfRange {
                    component: name.to_string(),
                    value: *value,
                });
            }
        }
        Ok(())
    }
}

/// Skill-text content components, all clipped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillComponents {
    /// L: lesson coverage.
    pub lesson_coverage: f64,
    /// G: evidence grounding.
    pub grounding: f64,
    /// R_p: parent-rule retention.
    pub parent_retention: f64,
    /// A_act: actionability.
    pub actionability: f64,
    /// V_s: safety validity.
    pub safety_validity: f64,
    /// N: non-redundancy.
    pub non_redundancy: f64,
    /// D: conservative mutation size.
    pub mutation_conservatism: f64,
    /// M_keep: critical-directive retention gate.
    pub retention_gate: f64,
}

impl SkillComponents {
    pub fn all(value: f64) -> Self {
        Self {
            lesson_coverage: value,
            grounding: value,
            parent_retention: value,
            actionability: value,
            safety_validity: value,
            non_redundancy: value,
            mutation_conservatism: value,
            retention_gate: value,
        }
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.lesson_coverage,
            self.grounding,
            self.parent_retention,
            self.actionability,
            self.safety_validity,
            self.non_redundancy,
            self.mutation_conservatism,
            self.retention_gate,
        ]
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for (value, name) in self.as_array().iter().zip([
            "lesson_coverage",
            "grounding",
            "parent_retention",
            "actionability",
            "safety_validity",
            "non_redundancy",
            "mutation_conservatism",
            "retention_gate",
        ]) {
            if !(0.0..=1.0).contains(value) || !value.is_finite() {
                return Err(MetricsError::ComponentOutOfRange {
                    component: name.to_string(),
                    value: *value,
                });
            }
        }
        Ok(())
    }
}

/// Context the progress estimator needs beyond the trace itself.
#[derive(Debug, Clone, Default)]
pub struct EstimatorContext {
    pub turn_cap: u32,
    /// Declared deliverable paths; empty means no path discipline applies.
    pub target_paths: Vec<String>,
}

impl EstimatorContext {
    pub fn from_task(task: &crate::domain::Task, turn_cap: u32) -> Self {
        Self {
            turn_cap,
            target_paths: extract_path_tokens(&task.prompt),
        }
    }
}

/// Replaceable per-rollout progress estimator.
pub trait ProgressEstimator: Send + Sync {
    fn estimate(
        &self,
        rollout: &RolloutRecord,
        ctx: &EstimatorContext,
    ) -> Result<ProgressComponents, MetricsError>;
}

/// Default deterministic rubric over the recorded trace.
#[derive(Debug, Clone, Copy, Default)]
pub struct TraceProgressEstimator;

impl ProgressEstimator for TraceProgressEstimator {
    fn estimate(
        &self,
        rollout: &RolloutRecord,
        ctx: &EstimatorContext,
    ) -> Result<ProgressComponents, MetricsError> {
        estimate_progress_components(rollout, ctx)
    }
}

fn clip01(value: f64) -> f64 {
    value.clamp(0.0, 1.0)
}

/// Deterministic progress rubric:
///
/// * V: 1 when the final verifier passed, else the fraction of hidden tests
///   met when counts are present, else a phase-scaled fallback.
/// * X: phase reached / 4.
/// * H: fraction of harness-convention checks met (target touched, compile
///   attempted, validation ordering).
/// * E: fraction of edits whose next compile attempt succeeded.
/// * eta: 1 - turns_used / turn_cap.
/// * P_path: 1 - fraction of written files landing off-target.
pub fn estimate_progress_components(
    rollout: &RolloutRecord,
    ctx: &EstimatorContext,
) -> Result<ProgressComponents, MetricsError> {
    if ctx.turn_cap == 0 {
        return Err(MetricsError::IncompleteRollout("turn cap of zero".to_string()));
    }
    if rollout.events.is_empty() {
        // No evidence at all.
        return Ok(ProgressComponents::all(0.0));
    }

    let outcome = &rollout.final_outcome;
    let phase = rollout.phase_reached;

    let verifier_progress = if outcome.passed {
        1.0
    } else {
        match (outcome.tests_total, outcome.tests_failed) {
            (Some(total), Some(failed)) if total > 0 => 1.0 - failed as f64 / total as f64,
            // No partial counts: give modest phase-scaled credit.
            _ => phase.index() as f64 / 8.0,
        }
    };

    let execution_phase = phase.index() as f64 / 4.0;

    let harness_alignment = harness_alignment_score(rollout, ctx);
    let edit_quality = edit_quality_score(rollout);

    let turns_used = rollout.events.last().map(|e| e.turn).unwrap_or(0);
    let efficiency = 1.0 - turns_used as f64 / ctx.turn_cap as f64;

    let path_grounding = path_grounding_score(rollout, ctx);

    let components = ProgressComponents {
        verifier_progress: clip01(verifier_progress),
        execution_phase: clip01(execution_phase),
        harness_alignment: clip01(harness_alignment),
        edit_quality: clip01(edit_quality),
        efficiency: clip01(efficiency),
        path_grounding: clip01(path_grounding),
    };
    components.validate()?;
    Ok(components)
}

fn is_on_target(path: &str, targets: &[String]) -> bool {
    targets.is_empty() || targets.iter().any(|t| t == path)
}

fn harness_alignment_score(rollout: &RolloutRecord, ctx: &EstimatorContext) -> f64 {
    let events = &rollout.events;
    // Check 1: a declared target path was written (vacuous without targets).
    let target_touched = ctx.target_paths.is_empty()
        || events
            .iter()
            .flat_map(|e| e.files_written.iter())
            .any(|p| ctx.target_paths.iter().any(|t| t == p));
    // Check 2: a compile was attempted.
    let compiled = events.iter().any(|e| e.kind == ToolKind::Compile);
    // Check 3: some validation ran after a successful compile.
    let mut compile_ok_seen = false;
    let mut validated_after_compile = false;
    let mut premature_validation = false;
    for event in events {
        match event.kind {
            ToolKind::Compile if event.succeeded => compile_ok_seen = true,
            ToolKind::Simulate | ToolKind::Feedback if event.succeeded => {
                if compile_ok_seen {
                    validated_after_compile = true;
                } else {
                    premature_validation = true;
                }
            }
            _ => {}
        }
    }
    // Check 4: no validation ran before the first successful compile.
    let ordered = !premature_validation;
    let checks = [target_touched, compiled, validated_after_compile, ordered];
    checks.iter().filter(|c| **c).count() as f64 / checks.len() as f64
}

fn edit_quality_score(rollout: &RolloutRecord) -> f64 {
    let mut edits = 0u32;
    let mut good_edits = 0u32;
    let events = &rollout.events;
    for (idx, event) in events.iter().enumerate() {
        if event.kind != ToolKind::Edit {
            continue;
        }
        edits += 1;
        if let Some(compile) = events[idx + 1..].iter().find(|e| e.kind == ToolKind::Compile) {
            if compile.succeeded {
                good_edits += 1;
            }
        }
    }
    if edits == 0 {
        0.0
    } else {
        good_edits as f64 / edits as f64
    }
}

fn path_grounding_score(rollout: &RolloutRecord, ctx: &EstimatorContext) -> f64 {
    let mut writes = 0u32;
    let mut shadow = 0u32;
    for event in &rollout.events {
        for path in &event.files_written {
            writes += 1;
            if !is_on_target(path, &ctx.target_paths) {
                shadow += 1;
            }
        }
    }
    if writes == 0 {
        1.0
    } else {
        1.0 - shadow as f64 / writes as f64
    }
}

/// Inputs for scoring a skill's text content.
pub struct SkillScoringInput<'a> {
    pub skill: &'a Skill,
    pub parent: Option<&'a Skill>,
    pub bank: &'a LessonBank,
    pub contract: &'a ExecutionContract,
    pub report: &'a SanitizerReport,
}

/// Replaceable skill-content estimator.
pub trait SkillComponentEstimator: Send + Sync {
    fn estimate(&self, input: &SkillScoringInput<'_>) -> SkillComponents;
}

/// Deterministic text-derived skill scoring.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSkillEstimator {
    matcher: KeywordMatcher,
}

impl SkillComponentEstimator for RuleSkillEstimator {
    fn estimate(&self, input: &SkillScoringInput<'_>) -> SkillComponents {
        let body = &input.skill.body;

        let guidance: Vec<&str> = input
            .bank
            .entries
            .iter()
            .filter(|l| matches!(l.tag, LessonTag::Keep | LessonTag::Add))
            .map(|l| l.text.as_str())
            .collect();
        let lesson_coverage = coverage_fraction(&self.matcher, &guidance, body);

        let criticals: Vec<&str> =
            input.bank.critical_lessons().iter().map(|l| l.text.as_str()).collect();
        let retention_gate = coverage_fraction(&self.matcher, &criticals, body);

        let grounding = grounding_score(body, input.contract);
        let parent_retention = match input.parent {
            None => 1.0,
            Some(parent) => {
                let lines: Vec<&str> = body_lines(&parent.body);
                coverage_fraction(&self.matcher, &lines, body)
            }
        };

        let lines = body_lines(body);
        let actionability = if lines.is_empty() {
            0.0
        } else {
            lines.iter().filter(|l| is_actionable(l, &input.contract.allowed_tools)).count() as f64
                / lines.len() as f64
        };

        let safety_validity = if !input.report.invalid_reasons.is_empty() {
            0.0
        } else {
            (1.0 - 0.15 * input.report.repairs.len() as f64).max(0.0)
        };

        let non_redundancy = non_redundancy_score(&lines);

        let mutation_conservatism = match input.parent {
            None => 1.0,
            Some(parent) => jaccard_similarity(body, &parent.body),
        };

        SkillComponents {
            lesson_coverage: clip01(lesson_coverage),
            grounding: clip01(grounding),
            parent_retention: clip01(parent_retention),
            actionability: clip01(actionability),
            safety_validity: clip01(safety_validity),
            non_redundancy: clip01(non_redundancy),
            mutation_conservatism: clip01(mutation_conservatism),
            retention_gate: clip01(retention_gate),
        }
    }
}

/// Fraction of path and tool references the visible contract confirms.
fn grounding_score(body: &str, contract: &ExecutionContract) -> f64 {
    let mut refs = 0u32;
    let mut grounded = 0u32;
    for path in extract_path_tokens(body) {
        refs += 1;
        if contract.visible_paths.iter().any(|p| p == &path) {
            grounded += 1;
        }
    }
    let words = text::token_set(body);
    for tool in crate::rollout::TOOL_UNIVERSE {
        if words.contains(*tool) {
            refs += 1;
            if contract.allows_tool(tool) {
                grounded += 1;
            }
        }
    }
    if refs == 0 {
        1.0
    } else {
        grounded as f64 / refs as f64
    }
}

fn non_redundancy_score(lines: &[&str]) -> f64 {
    if lines.is_empty() {
        return 1.0;
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut duplicates = 0u32;
    for line in lines {
        if !seen.insert(text::normalize(line)) {
            duplicates += 1;
        }
    }
    1.0 - duplicates as f64 / lines.len() as f64
}
