//! Oracle stage: converts one generation's rollout evidence into KEEP, ADD,
//! and REMOVE lessons. Ships a deterministic rule-based implementation for
//! certifiable runs and a chat-backed one for live models.

use serde::{Deserialize, Serialize};

use crate::domain::{
    ExecutionContract, LessonBank, LessonTag, Phase, RolloutRecord, Skill, Task, ToolKind,
};
use crate::selection::CandidateEvaluation;
use crate::services::{ChatClient, ChatMessage, ServiceError};
use crate::text::extract_path_tokens;

/// Everything the oracle may see for one generation: the full population's
/// traces, so failed children can contribute negative lessons.
pub struct OracleInput<'a> {
    pub generation: u32,
    pub task: &'a Task,
    pub contract: &'a ExecutionContract,
    pub population: &'a [Skill],
    pub evaluations: &'a [CandidateEvaluation],
    /// Rollouts grouped per population slot.
    pub rollouts: &'a [Vec<RolloutRecord>],
    pub survivor_id: &'a str,
    pub bank: &'a LessonBank,
}

/// One lesson proposed by the oracle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedLesson {
    pub tag: LessonTag,
    pub text: String,
    pub critical: bool,
    /// Population slots whose evidence produced the lesson.
    pub source_slots: Vec<u32>,
}

/// Oracle output for one generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct OracleLessons {
    pub rollup: String,
    pub lessons: Vec<ProposedLesson>,
}

pub trait Oracle: Send + Sync {
    fn summarize(&self, input: &OracleInput<'_>) -> Result<OracleLessons, ServiceError>;
}

/// Deterministic oracle: mines pass/fail structure from the traces with
/// fixed rules. Identical generations always yield identical lessons.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleOracle;

struct SlotStats {
    slot: u32,
    passes: u32,
    rollouts: u32,
    wrote_target: bool,
    wrote_shadow: bool,
    compile_failures: bool,
    capped_inspecting: bool,
    used_feedback: bool,
    inspected_before_edit: bool,
    validated_after_edit: bool,
}

fn slot_stats(slot: u32, rollouts: &[RolloutRecord], targets: &[String]) -> SlotStats {
    let mut stats = SlotStats {
        slot,
        passes: 0,
        rollouts: rollouts.len() as u32,
        wrote_target: false,
        wrote_shadow: false,
        compile_failures: false,
        capped_inspecting: false,
        used_feedback: false,
        inspected_before_edit: false,
        validated_after_edit: false,
    };
    for rollout in rollouts {
        if rollout.final_outcome.passed {
            stats.passes += 1;
        }
        if rollout.feedback_calls_used > 0 {
            stats.used_feedback = true;
        }
        if rollout.phase_reached <= Phase::P1 && !rollout.events.is_empty() {
            stats.capped_inspecting = true;
        }
        let mut seen_edit = false;
        let mut seen_inspect = false;
        for event in &rollout.events {
            match event.kind {
                ToolKind::Inspect => {
                    if !seen_edit {
                        seen_inspect = true;
                    }
                }
                ToolKind::Edit => {
                    seen_edit = true;
                    for path in &event.files_written {
                        if targets.is_empty() || targets.iter().any(|t| t == path) {
                            stats.wrote_target = true;
                        } else {
                            stats.wrote_shadow = true;
                        }
                    }
                }
                ToolKind::Compile if !event.succeeded => stats.compile_failures = true,
                ToolKind::Compile | ToolKind::Simulate | ToolKind::Feedback
                    if event.succeeded && seen_edit =>
                {
                    stats.validated_after_edit = true
                }
                _ => {}
            }
        }
        if seen_inspect && seen_edit {
            stats.inspected_before_edit = true;
        }
    }
    stats
}

impl Oracle for RuleOracle {
    fn summarize(&self, input: &OracleInput<'_>) -> Result<OracleLessons, ServiceError> {
        let targets = extract_path_tokens(&input.task.prompt);
        let stats: Vec<SlotStats> = input
            .rollouts
            .iter()
            .enumerate()
            .map(|(slot, rollouts)| slot_stats(slot as u32, rollouts, &targets))
            .collect();

        let total_rollouts: u32 = stats.iter().map(|s| s.rollouts).sum();
        let total_passes: u32 = stats.iter().map(|s| s.passes).sum();
        let mut rates: Vec<f64> = stats
            .iter()
            .map(|s| if s.rollouts == 0 { 0.0 } else { s.passes as f64 / s.rollouts as f64 })
            .collect();
        rates.sort_by(|a, b| b.total_cmp(a));
        let avg = if total_rollouts == 0 {
            0.0
        } else {
            total_passes as f64 / total_rollouts as f64
        };
        let label = if total_passes == 0 {
            "NEVER SOLVED"
        } else if total_passes == total_rollouts {
            "ALWAYS SOLVED"
        } else {
            "SOMETIMES SOLVED"
        };
        let rendered_rates: Vec<String> =
            rates.iter().map(|r| format!("{:.0}%", r * 100.0)).collect();
        let rollup = format!(
            "[{}] {} avg={:.0}% ({}) [{}]\nrollouts={} ({} pass, {} fail)",
            input.task.category_id,
            input.task.task_id,
            avg * 100.0,
            rendered_rates.join(", "),
            label,
            total_rollouts,
            total_passes,
            total_rollouts - total_passes,
        );

        let mut lessons = Vec::new();
        let passing: Vec<&SlotStats> = stats.iter().filter(|s| s.passes > 0).collect();
        let failing: Vec<&SlotStats> = stats.iter().filter(|s| s.passes < s.rollouts).collect();

        // KEEP: behaviors every passing candidate shares.
        if !passing.is_empty() {
            if passing.iter().all(|s| s.inspected_before_edit) {
                lessons.push(ProposedLesson {
                    tag: LessonTag::Keep,
                    text: "Read the relevant workspace files before making edits.".to_string(),
                    critical: false,
                    source_slots: passing.iter().map(|s| s.slot).collect(),
                });
            }
            if passing.iter().all(|s| s.validated_after_edit) {
                lessons.push(ProposedLesson {
                    tag: LessonTag::Keep,
                    text: "Run compile and simulate after editing, before finishing.".to_string(),
                    critical: false,
                    source_slots: passing.iter().map(|s| s.slot).collect(),
                });
            }
            if passing.iter().all(|s| s.used_feedback)
                && input.contract.allows_tool("verify_feedback")
            {
                lessons.push(ProposedLesson {
                    tag: LessonTag::Keep,
                    text: "Use verify_feedback after a successful compile to check the hidden \
                           tests."
                        .to_string(),
                    critical: false,
                    source_slots: passing.iter().map(|s| s.slot).collect(),
                });
            }
        }

        // ADD: corrective guidance from failure structure.
        if let Some(target) = targets.first() {
            let missed: Vec<u32> = failing
                .iter()
                .filter(|s| s.wrote_shadow || !s.wrote_target)
                .map(|s| s.slot)
                .collect();
            if !missed.is_empty() {
                lessons.push(ProposedLesson {
                    tag: LessonTag::Add,
                    text: format!(
                        "Write the complete required content to {target} exactly as named in \
                         the task."
                    ),
                    critical: true,
                    source_slots: missed,
                });
            }
        }
        let compile_strugglers: Vec<u32> =
            failing.iter().filter(|s| s.compile_failures).map(|s| s.slot).collect();
        if !compile_strugglers.is_empty() {
            lessons.push(ProposedLesson {
                tag: LessonTag::Add,
                text: "After every file write, run compile and fix errors before simulating."
                    .to_string(),
                critical: false,
                source_slots: compile_strugglers,
            });
        }
        let stalled: Vec<u32> =
            failing.iter().filter(|s| s.capped_inspecting).map(|s| s.slot).collect();
        if !stalled.is_empty() {
            lessons.push(ProposedLesson {
                tag: LessonTag::Add,
                text: "Make the first edit early instead of spending every turn inspecting."
                    .to_string(),
                critical: false,
                source_slots: stalled,
            });
        }

        // REMOVE: patterns seen only in failing rollouts.
        let shadow_writers: Vec<u32> = failing
            .iter()
            .filter(|s| s.wrote_shadow && !passing.iter().any(|p| p.slot == s.slot))
            .map(|s| s.slot)
            .collect();
        if !shadow_writers.is_empty() {
            lessons.push(ProposedLesson {
                tag: LessonTag::Remove,
                text: "write same-basename shadow copies instead of the declared target file"
                    .to_string(),
                critical: false,
                source_slots: shadow_writers,
            });
        }

        Ok(OracleLessons { rollup, lessons })
    }
}

/// Chat-backed oracle; renders the generation evidence into a prompt and
/// parses tagged lesson lines back out.
pub struct LlmOracle {
    client: ChatClient,
    model: String,
    temperature: f64,
    system_prompt: String,
}

/// Default oracle system prompt, replaceable at construction.
pub const DEFAULT_ORACLE_PROMPT: &str = include_str!("../../assets/oracle_system.md");

impl LlmOracle {
    pub fn new(client: ChatClient, model: impl Into<String>, temperature: f64) -> Self {
        Self {
            client,
            model: model.into(),
            temperature,
            system_prompt: DEFAULT_ORACLE_PROMPT.to_string(),
        }
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    fn render_input(input: &OracleInput<'_>) -> String {
        let mut text = format!(
            "Task {} ({})\nObjective:\n{}\n\nCandidates:\n",
            input.task.task_id, input.task.category_id, input.task.prompt
        );
        for (evaluation, rollouts) in input.evaluations.iter().zip(input.rollouts) {
            text.push_str(&format!(
                "- {} slot {} pass@1={:.3} SelectQ={:.6} invalid={}\n",
                evaluation.skill_id,
                evaluation.slot,
                evaluation.pass_rate,
                evaluation.select_q,
                evaluation.invalid
            ));
            for rollout in rollouts {
                let tools: Vec<&str> =
                    rollout.events.iter().map(|e| e.tool_name.as_str()).collect();
                text.push_str(&format!(
                    "  r{} outcome={} phase={} tools=[{}]\n",
                    rollout.repeat_index,
                    if rollout.final_outcome.passed { "pass" } else { "fail" },
                    rollout.phase_reached,
                    tools.join(", ")
                ));
            }
        }
        text.push_str("\nExisting lessons:\n");
        for lesson in &input.bank.entries {
            text.push_str(&format!("- {:?}: {}\n", lesson.tag, lesson.text));
        }
        text.push_str(&format!("\nSurvivor: {}\n", input.survivor_id));
        text
    }

    fn parse(content: &str) -> OracleLessons {
        let mut out = OracleLessons::default();
        for line in content.lines() {
            let trimmed = line.trim().trim_start_matches('-').trim();
            let (tag, critical, rest) = if let Some(rest) = trimmed.strip_prefix("KEEP:") {
                (LessonTag::Keep, false, rest)
            } else if let Some(rest) = trimmed.strip_prefix("ADD!:") {
                (LessonTag::Add, true, rest)
            } else if let Some(rest) = trimmed.strip_prefix("ADD:") {
                (LessonTag::Add, false, rest)
            } else if let Some(rest) = trimmed.strip_prefix("REMOVE:") {
                (LessonTag::Remove, false, rest)
            } else if let Some(rest) = trimmed.strip_prefix("ROLLUP:") {
                out.rollup = rest.trim().to_string();
                continue;
            } else {
                continue;
            };
            let text = rest.trim();
            if !text.is_empty() {
                out.lessons.push(ProposedLesson {
                    tag,
                    text: text.to_string(),
                    critical,
                    source_slots: Vec::new(),
                });
            }
        }
        out
    }
}

impl Oracle for LlmOracle {
    fn summarize(&self, input: &OracleInput<'_>) -> Result<OracleLessons, ServiceError> {
        let messages = [
            ChatMessage::system(self.system_prompt.clone()),
            ChatMessage::user(Self::render_input(input)),
        ];
        let content = self.client.complete(&self.model, self.temperature, &messages)?;
        Ok(Self::parse(&content))
    }
}
