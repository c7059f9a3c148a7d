//! Shared domain types: run configuration, tasks, skills, rollout traces,
//! lesson banks, and the execution/visibility contract.
//!
//! Everything here is an immutable value object after construction and is
//! safe to share across threads. Persistence lives in [`crate::telemetry`];
//! scoring lives in [`crate::metrics`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::components::ProgressComponents;

/// How far a rollout progressed: nothing, inspected, edited, compiled, tested.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub enum Phase {
    #[default]
    #[serde(rename = "P0-none")]
    P0,
    #[serde(rename = "P1-inspected")]
    P1,
    #[serde(rename = "P2-edited")]
    P2,
    #[serde(rename = "P3-compiled")]
    P3,
    #[serde(rename = "P4-tested")]
    P4,
}

impl Phase {
    /// Numeric rung of the ladder, 0..=4.
    pub fn index(self) -> u32 {
        match self {
            Phase::P0 => 0,
            Phase::P1 => 1,
            Phase::P2 => 2,
            Phase::P3 => 3,
            Phase::P4 => 4,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let label = match self {
            Phase::P0 => "P0-none",
            Phase::P1 => "P1-inspected",
            Phase::P2 => "P2-edited",
            Phase::P3 => "P3-compiled",
            Phase::P4 => "P4-tested",
        };
        f.write_str(label)
    }
}

/// Classification of a tool event, fixed by the tool registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Inspect,
    Edit,
    Compile,
    Simulate,
    Feedback,
    FinalVerify,
    Other,
}

/// Top-level run configuration shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Population size K (skills per generation).
    pub population_size: u32,
    /// Number of generations G.
    pub generations: u32,
    /// Rollout repeats R per candidate skill.
    pub repeats: u32,
    /// Number of co-optimized tasks N_task (1 for task-wise runs).
    pub task_count: u32,
    /// Agent turn budget per rollout.
    pub turn_cap: u32,
    /// Runtime verifier-feedback calls allowed per rollout.
    pub feedback_budget: u32,
    /// Semantic-floor slack tau in [0, 1].
    pub semantic_floor_tau: f64,
    /// Expose the budgeted `verify_feedback` tool during rollouts.
    pub dense_feedback_enabled: bool,
    /// Run the evolutionary loop (false = seed-skill evaluation only).
    pub ea_enabled: bool,
    pub rollout_temperature: f64,
    pub oracle_temperature: f64,
    pub mutator_temperature: f64,
    /// Seed for deterministic components.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            population_size: 4,
            generations: 5,
            repeats: 4,
            task_count: 1,
            turn_cap: 30,
            feedback_budget: 3,
            semantic_floor_tau: 0.05,
            dense_feedback_enabled: true,
            ea_enabled: true,
            rollout_temperature: 0.2,
            oracle_temperature: 0.0,
            mutator_temperature: 0.35,
            seed: 0,
        }
    }
}

/// A single violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigViolation {
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid run config: {}", format_violations(.0))]
    Invalid(Vec<ConfigViolation>),
}

fn format_violations(violations: &[ConfigViolation]) -> String {
    violations
        .iter()
        .map(|v| format!("{} ({})", v.field, v.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks every `RunConfig` invariant, reporting all violations at once.
pub fn validate_run_config(config: &RunConfig) -> Result<(), ConfigError> {
    let mut violations = Vec::new();
    let mut require = |ok: bool, field: &str, reason: &str| {
        if !ok {
            violations.push(ConfigViolation {
                field: field.to_string(),
                reason: reason.to_string(),
            });
        }
    };
    require(config.population_size >= 1, "population_size", "K must be >= 1");
    require(config.generations >= 1, "generations", "G must be >= 1");
    require(config.repeats >= 1, "repeats", "R must be >= 1");
    require(config.task_count >= 1, "task_count", "N_task must be >= 1");
    require(config.turn_cap >= 1, "turn_cap", "turn cap must be >= 1");
    require(
        (0.0..=1.0).contains(&config.semantic_floor_tau),
        "semantic_floor_tau",
        "tau must lie in [0, 1]",
    );
    for (value, field) in [
        (config.rollout_temperature, "rollout_temperature"),
        (config.oracle_temperature, "oracle_temperature"),
        (config.mutator_temperature, "mutator_temperature"),
    ] {
        require((0.0..=2.0).contains(&value), field, "temperature must lie in [0, 2]");
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

/// One visible workspace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub content: String,
}

/// One task: a visible repository snapshot plus an objective, bound to a
/// verifier-capable environment through an opaque handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub category_id: String,
    pub prompt: String,
    pub workspace_spec: Vec<FileEntry>,
    pub environment_handle: String,
}

impl Task {
    /// Validates task invariants: non-empty id, unique relative workspace paths.
    pub fn validate(&self) -> Result<(), String> {
        if self.task_id.is_empty() {
            return Err("task_id must be non-empty".to_string());
        }
        let mut seen = BTreeSet::new();
        for entry in &self.workspace_spec {
            if entry.path.starts_with('/') {
                return Err(format!("workspace path {} must be relative", entry.path));
            }
            if !seen.insert(entry.path.as_str()) {
                return Err(format!("duplicate workspace path {}", entry.path));
            }
        }
        Ok(())
    }
}

/// Tag carried by a directive entry inside a skill document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectiveTag {
    #[serde(rename = "KEEP")]
    Keep,
    #[serde(rename = "ADD")]
    Add,
    /// Marks a directive that guards against a previously removed pattern.
    #[serde(rename = "REMOVE-violation-check")]
    RemoveViolationCheck,
}

/// One tagged directive entry of a skill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub tag: DirectiveTag,
    pub text: String,
}

/// How a skill entered its population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillOrigin {
    Seed,
    CarriedParent,
    MutatedChild,
    RepairedChild,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Valid,
    Invalid,
}

/// A versioned natural-language guidance document: the unit of evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub skill_id: String,
    pub generation: u32,
    pub slot: u32,
    pub parent_id: Option<String>,
    pub body: String,
    pub directives: Vec<Directive>,
    pub origin: SkillOrigin,
    pub validity: Validity,
    pub invalid_reasons: Vec<String>,
}

impl Skill {
    /// Builds a seed skill (generation entry point, no parent).
    pub fn seed(skill_id: impl Into<String>, generation: u32, body: impl Into<String>) -> Self {
        Self {
            skill_id: skill_id.into(),
            generation,
            slot: 0,
            parent_id: None,
            body: body.into(),
            directives: Vec::new(),
            origin: SkillOrigin::Seed,
            validity: Validity::Valid,
            invalid_reasons: Vec::new(),
        }
    }

    /// Checks the structural lineage/validity invariants of a single skill.
    pub fn validate(&self) -> Result<(), String> {
        match self.origin {
            SkillOrigin::Seed => {
                if self.parent_id.is_some() {
                    return Err(format!("seed skill {} must not have a parent", self.skill_id));
                }
            }
            _ => {
                if self.parent_id.is_none() {
                    return Err(format!("non-seed skill {} must have a parent", self.skill_id));
                }
            }
        }
        if self.validity == Validity::Invalid && self.invalid_reasons.is_empty() {
            return Err(format!("invalid skill {} must carry at least one reason", self.skill_id));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validity == Validity::Valid
    }
}

/// Canonical id of the slot-0 carried parent (or seed) of generation `g`.
pub fn carried_skill_id(generation: u32) -> String {
    format!("gen{generation}_ind0")
}

/// Canonical id of a mutated child created for generation `g` at `slot`.
pub fn child_skill_id(generation: u32, slot: u32) -> String {
    format!("child_gen{generation}_{slot}")
}

/// One tool invocation inside a rollout trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolEvent {
    /// 1-based agent turn that issued the call.
    pub turn: u32,
    pub tool_name: String,
    pub arguments: serde_json::Value,
    pub result_summary: String,
    pub files_written: Vec<String>,
    pub kind: ToolKind,
    /// Whether the tool ran and reported success (compiles, writes, ...).
    pub succeeded: bool,
}

/// Final hidden-verifier result for one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierOutcome {
    pub passed: bool,
    pub tests_total: Option<u32>,
    pub tests_failed: Option<u32>,
    pub phase: Phase,
    pub exit_code: i32,
    pub sanitized_tail: String,
}

impl VerifierOutcome {
    /// p_r as a number: 1.0 for pass, 0.0 for fail.
    pub fn reward(&self) -> f64 {
        if self.passed {
            1.0
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if let (Some(total), Some(failed)) = (self.tests_total, self.tests_failed) {
            if failed > total {
                return Err(format!("tests_failed {failed} exceeds tests_total {total}"));
            }
            if self.passed && failed != 0 {
                return Err("passed outcome must report zero failed tests".to_string());
            }
        }
        Ok(())
    }
}

/// One complete agent attempt at a task under a skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub task_id: String,
    pub skill_id: String,
    pub repeat_index: u32,
    pub events: Vec<ToolEvent>,
    pub feedback_calls_used: u32,
    pub final_outcome: VerifierOutcome,
    pub phase_reached: Phase,
    /// Dense per-rollout progress components, filled by the metrics engine.
    pub progress: Option<ProgressComponents>,
    /// Set when the agent or its transport failed mid-rollout.
    pub infra_failure: bool,
}

/// Maximum execution phase evidenced by a list of tool events.
///
/// P1 needs an inspect, P2 an edit, P3 a successful compile, and P4 any
/// executed simulation or verifier run (local simulate or feedback).
pub fn derive_phase(events: &[ToolEvent]) -> Phase {
    let mut phase = Phase::P0;
    for event in events {
        let reached = match event.kind {
            ToolKind::Inspect => Phase::P1,
            ToolKind::Edit => Phase::P2,
            ToolKind::Compile if event.succeeded => Phase::P3,
            ToolKind::Compile => Phase::P0,
            ToolKind::Simulate | ToolKind::Feedback | ToolKind::FinalVerify
                if event.succeeded =>
            {
                Phase::P4
            }
            _ => Phase::P0,
        };
        phase = phase.max(reached);
    }
    phase
}

/// Tag of a banked oracle lesson.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LessonTag {
    #[serde(rename = "KEEP")]
    Keep,
    #[serde(rename = "ADD")]
    Add,
    #[serde(rename = "REMOVE")]
    Remove,
}

/// One oracle lesson retained in the task-local bank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lesson {
    pub lesson_id: String,
    pub tag: LessonTag,
    pub text: String,
    pub source_generation: u32,
    /// True when every candidate contributing this lesson was invalid.
    pub from_invalid_candidate: bool,
}

/// Cumulative task-local memory of oracle lessons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LessonBank {
    pub entries: Vec<Lesson>,
    /// Ids of entries whose guidance a skill must retain.
    pub critical_directives: Vec<String>,
}

impl LessonBank {
    pub fn critical_lessons(&self) -> Vec<&Lesson> {
        self.entries
            .iter()
            .filter(|l| self.critical_directives.iter().any(|id| id == &l.lesson_id))
            .collect()
    }

    pub fn lessons_with_tag(&self, tag: LessonTag) -> Vec<&Lesson> {
        self.entries.iter().filter(|l| l.tag == tag).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        for id in &self.critical_directives {
            if !self.entries.iter().any(|l| &l.lesson_id == id) {
                return Err(format!("critical directive {id} references no bank entry"));
            }
        }
        Ok(())
    }

    /// Next free lesson id.
    pub fn next_lesson_id(&self) -> String {
        format!("lesson_{}", self.entries.len())
    }
}

/// Per-generation oracle rollup written alongside the lesson bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub generation: u32,
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    pub rollup: String,
    pub keep: Vec<String>,
    pub add: Vec<String>,
    pub remove: Vec<String>,
}

impl OracleSummary {
    pub fn validate(&self) -> Result<(), String> {
        if self.worst <= self.mean && self.mean <= self.best {
            Ok(())
        } else {
            Err(format!(
                "selection scores must be ordered: worst {} <= mean {} <= best {}",
                self.worst, self.mean, self.best
            ))
        }
    }
}

/// Evidence handed from selection to the mutator for one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationHandoff {
    pub generation: u32,
    pub survivor_id: String,
    /// Survivor improvement over the carried parent, by metric.
    pub selection_delta: f64,
    pub pass_delta: f64,
    pub progress_delta: f64,
    /// Pointer to the lesson-bank snapshot backing this handoff.
    pub lesson_bank_ref: String,
}

/// Visibility contract: what the agent and skill text may reference.
///
/// The same record is persisted by the telemetry store as the run's
/// execution contract and consumed by the sanitizer and feedback gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExecutionContract {
    pub allowed_tools: Vec<String>,
    pub visible_paths: Vec<String>,
    pub hidden_identifiers: Vec<String>,
}

impl ExecutionContract {
    pub fn allows_tool(&self, name: &str) -> bool {
        self.allowed_tools.iter().any(|t| t == name)
    }
}

/// Walks parent links over a set of skills, confirming the lineage forms a
/// forest rooted at seeds (terminates, no cycles, no dangling parents).
pub fn validate_lineage(skills: &[Skill]) -> Result<(), String> {
    let by_id: std::collections::BTreeMap<&str, &Skill> =
        skills.iter().map(|s| (s.skill_id.as_str(), s)).collect();
    for skill in skills {
        let mut seen = BTreeSet::new();
        let mut current = skill;
        loop {
            if !seen.insert(current.skill_id.as_str()) {
                return Err(format!("lineage cycle through {}", current.skill_id));
            }
            match &current.parent_id {
                None => {
                    if current.origin != SkillOrigin::Seed {
                        return Err(format!(
                            "lineage of {} terminates at non-seed {}",
                            skill.skill_id, current.skill_id
                        ));
                    }
                    break;
                }
                Some(parent) => match by_id.get(parent.as_str()) {
                    Some(next) => current = next,
                    None => {
                        return Err(format!(
                            "skill {} references unknown parent {}",
                            current.skill_id, parent
                        ))
                    }
                },
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(kind: ToolKind, succeeded: bool) -> ToolEvent {
        ToolEvent {
            turn: 1,
            tool_name: "t".to_string(),
            arguments: serde_json::json!({}),
            result_summary: String::new(),
            files_written: Vec::new(),
            kind,
            succeeded,
        }
    }

    #[test]
    fn default_config_is_valid() {
        // K=4, G=5, R=4, N_task=1, turn_cap=30, budget=3.
        let config = RunConfig::default();
        assert_eq!(config.population_size, 4);
        assert_eq!(config.generations, 5);
        assert_eq!(config.repeats, 4);
        assert_eq!(config.turn_cap, 30);
        assert_eq!(config.feedback_budget, 3);
        validate_run_config(&config).unwrap();
    }

    #[test]
    fn zero_population_is_rejected() {
        let config = RunConfig {
            population_size: 0,
            ..RunConfig::default()
        };
        let err = validate_run_config(&config).unwrap_err();
        let ConfigError::Invalid(violations) = err;
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].field, "population_size");
    }

    #[test]
    fn out_of_range_tau_is_rejected() {
        let config = RunConfig {
            semantic_floor_tau: 1.5,
            ..RunConfig::default()
        };
        let err = validate_run_config(&config).unwrap_err();
        let ConfigError::Invalid(violations) = err;
        assert!(violations.iter().any(|v| v.field == "semantic_floor_tau"));
    }

    #[test]
    fn all_violations_are_reported_together() {
        let config = RunConfig {
            population_size: 0,
            repeats: 0,
            semantic_floor_tau: -0.2,
            ..RunConfig::default()
        };
        let ConfigError::Invalid(violations) = validate_run_config(&config).unwrap_err();
        assert_eq!(violations.len(), 3);
    }

    #[test]
    fn derive_phase_empty_is_p0() {
        assert_eq!(derive_phase(&[]), Phase::P0);
    }

    #[test]
    fn derive_phase_takes_maximum_regardless_of_order() {
        let events = vec![event(ToolKind::Edit, true), event(ToolKind::Inspect, true)];
        assert_eq!(derive_phase(&events), Phase::P2);
    }

    #[test]
    fn derive_phase_full_ladder() {
        let events = vec![
            event(ToolKind::Inspect, true),
            event(ToolKind::Edit, true),
            event(ToolKind::Compile, true),
            event(ToolKind::Simulate, true),
        ];
        assert_eq!(derive_phase(&events), Phase::P4);
    }

    #[test]
    fn failed_compile_does_not_reach_p3() {
        let events = vec![event(ToolKind::Edit, true), event(ToolKind::Compile, false)];
        assert_eq!(derive_phase(&events), Phase::P2);
    }

    #[test]
    fn seed_with_parent_is_invalid() {
        let mut skill = Skill::seed("gen1_ind0", 1, "body");
        skill.parent_id = Some("x".to_string());
        assert!(skill.validate().is_err());
    }

    #[test]
    fn lineage_forest_detects_cycles() {
        let seed = Skill::seed("gen1_ind0", 1, "body");
        let mut a = Skill::seed("child_gen1_1", 1, "body");
        a.origin = SkillOrigin::MutatedChild;
        a.parent_id = Some("child_gen1_2".to_string());
        let mut b = Skill::seed("child_gen1_2", 1, "body");
        b.origin = SkillOrigin::MutatedChild;
        b.parent_id = Some("child_gen1_1".to_string());
        assert!(validate_lineage(&[seed.clone(), a.clone(), b.clone()]).is_err());

        a.parent_id = Some("gen1_ind0".to_string());
        b.parent_id = Some("child_gen1_1".to_string());
        validate_lineage(&[seed, a, b]).unwrap();
    }

    #[test]
    fn verifier_outcome_rejects_inconsistent_counts() {
        let outcome = VerifierOutcome {
            passed: true,
            tests_total: Some(5),
            tests_failed: Some(2),
            phase: Phase::P4,
            exit_code: 0,
            sanitized_tail: String::new(),
        };
        assert!(outcome.validate().is_err());
    }

    #[test]
    fn task_rejects_absolute_and_duplicate_paths() {
        let mut task = Task {
            task_id: "t".to_string(),
            category_id: "cid003".to_string(),
            prompt: String::new(),
            workspace_spec: vec![
                FileEntry {
                    path: "a.v".to_string(),
                    content: String::new(),
                },
                FileEntry {
                    path: "a.v".to_string(),
                    content: String::new(),
                },
            ],
            environment_handle: "env".to_string(),
        };
        assert!(task.validate().is_err());
        task.workspace_spec[1].path = "/abs.v".to_string();
        assert!(task.validate().is_err());
        task.workspace_spec[1].path = "b.v".to_string();
        task.validate().unwrap();
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arbitrary_event() -> impl Strategy<Value = ToolEvent> {
            (0usize..7, proptest::bool::ANY).prop_map(|(kind, succeeded)| {
                let kind = [
                    ToolKind::Inspect,
                    ToolKind::Edit,
                    ToolKind::Compile,
                    ToolKind::Simulate,
                    ToolKind::Feedback,
                    ToolKind::FinalVerify,
                    ToolKind::Other,
                ][kind];
                super::event(kind, succeeded)
            })
        }

        proptest! {
            #[test]
            fn derive_phase_is_monotone_under_appends(
                events in proptest::collection::vec(arbitrary_event(), 0..20),
                extra in arbitrary_event(),
            ) {
                let before = derive_phase(&events);
                let mut extended = events;
                extended.push(extra);
                prop_assert!(derive_phase(&extended) >= before);
            }
        }
    }
}
