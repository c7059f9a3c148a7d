//! Run-directory persistence. Every artifact family a generation produces
//! is written here so any metric or survivor decision can be recomputed
//! bit-exactly from disk (see [`replay`]).
//!
//! Layout per run:
//!
//! ```text
//! <root>/
//!   status.json  run_config.json  execution_contract.json  preflight_report.json
//!   best_skill.md
//!   gen<g>/
//!     rollout_diagnostics.jsonl     generation_metrics.json
//!     combined_selection_fitness.json
//!     oracle_feedback.md            lesson_bank.md
//!     mutation_handoff.md (mutation generations)
//!     ea_survivor_skill.md
//!     skill_sanitization.jsonl  skill_integration.jsonl  mutation_health.jsonl
//! ```
//!
//! Line families are append-only; document families are replace-on-write
//! with a versioned backup. Timestamps live only in status metadata so
//! metric files stay byte-stable.

pub mod replay;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    ExecutionContract, LessonBank, LessonTag, MutationHandoff, OracleSummary, Phase,
    RolloutRecord, RunConfig, Skill, SkillOrigin,
};
use crate::metrics::{ProgressAggregate, ProgressComponents, SkillComponents};
use crate::sanitizer::{MutationHealth, SanitizerReport};
use crate::selection::CandidateEvaluation;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in {family}: {reason}")]
    SchemaViolation { family: String, reason: String },
    #[error("missing artifact {family} in {path}")]
    MissingArtifact { family: String, path: String },
    #[error("schema drift in {path}: {reason}")]
    SchemaDrift { path: String, reason: String },
}

/// Every artifact family the store knows how to persist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactFamily {
    Status,
    RunConfig,
    ExecutionContract,
    PreflightReport,
    RolloutDiagnostics,
    GenerationMetrics,
    SelectionFitness,
    OracleFeedback,
    LessonBank,
    MutationHandoff,
    SurvivorSkill,
    MutationHealth,
    SkillSanitization,
    SkillIntegration,
    BestSkill,
}

impl ArtifactFamily {
    pub fn file_name(self) -> &'static str {
        match self {
            ArtifactFamily::Status => "status.json",
            ArtifactFamily::RunConfig => "run_config.json",
            ArtifactFamily::ExecutionContract => "execution_contract.json",
            ArtifactFamily::PreflightReport => "preflight_report.json",
            ArtifactFamily::RolloutDiagnostics => "rollout_diagnostics.jsonl",
            ArtifactFamily::GenerationMetrics => "generation_metrics.json",
            ArtifactFamily::SelectionFitness => "combined_selection_fitness.json",
            ArtifactFamily::OracleFeedback => "oracle_feedback.md",
            ArtifactFamily::LessonBank => "lesson_bank.md",
            ArtifactFamily::MutationHandoff => "mutation_handoff.md",
            ArtifactFamily::SurvivorSkill => "ea_survivor_skill.md",
            ArtifactFamily::MutationHealth => "mutation_health.jsonl",
            ArtifactFamily::SkillSanitization => "skill_sanitization.jsonl",
            ArtifactFamily::SkillIntegration => "skill_integration.jsonl",
            ArtifactFamily::BestSkill => "best_skill.md",
        }
    }

    /// Line families append; everything else replaces.
    pub fn is_line_family(self) -> bool {
        matches!(
            self,
            ArtifactFamily::RolloutDiagnostics
                | ArtifactFamily::MutationHealth
                | ArtifactFamily::SkillSanitization
                | ArtifactFamily::SkillIntegration
        )
    }

    /// Families that live under a `gen<g>/` directory.
    pub fn is_per_generation(self) -> bool {
        !matches!(
            self,
            ArtifactFamily::Status
                | ArtifactFamily::RunConfig
                | ArtifactFamily::ExecutionContract
                | ArtifactFamily::PreflightReport
                | ArtifactFamily::BestSkill
        )
    }
}

/// Payload handed to [`RunStore::write_artifact`].
#[derive(Debug, Clone)]
pub enum ArtifactPayload {
    Json(serde_json::Value),
    Text(String),
}

/// Run lifecycle metadata; the only file that may carry timestamps or host
/// identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusDoc {
    pub run_id: String,
    pub task_id: String,
    pub category_id: String,
    pub condition: String,
    pub state: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub generations_completed: u32,
    pub host: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreflightCheck {
    pub name: String,
    pub ok: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreflightReport {
    pub checks: Vec<PreflightCheck>,
    pub ok: bool,
}

/// One rollout line in `rollout_diagnostics.jsonl`: summary fields mirrored
/// from the run logs plus the full record for bit-exact replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutDiagnostic {
    pub generation: u32,
    pub slot: u32,
    pub repeat: u32,
    pub skill_id: String,
    pub task_id: String,
    pub category_id: String,
    pub outcome: String,
    pub reward: f64,
    pub phase: Phase,
    pub num_tool_calls: u32,
    pub feedback_calls: u32,
    pub components: ProgressComponents,
    pub f_progress: f64,
    pub record: RolloutRecord,
}

impl RolloutDiagnostic {
    pub fn new(
        generation: u32,
        slot: u32,
        category_id: &str,
        record: RolloutRecord,
        components: ProgressComponents,
        f_progress: f64,
    ) -> Self {
        Self {
            generation,
            slot,
            repeat: record.repeat_index,
            skill_id: record.skill_id.clone(),
            task_id: record.task_id.clone(),
            category_id: category_id.to_string(),
            outcome: if record.final_outcome.passed { "pass" } else { "fail" }.to_string(),
            reward: record.final_outcome.reward(),
            phase: record.phase_reached,
            num_tool_calls: record.events.len() as u32,
            feedback_calls: record.feedback_calls_used,
            components,
            f_progress,
            record,
        }
    }
}

/// Per-candidate scoring inputs and aggregates for one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateMetrics {
    pub skill_id: String,
    pub slot: u32,
    pub origin: SkillOrigin,
    pub parent_id: Option<String>,
    pub sanitizer_valid: bool,
    pub invalid_reasons: Vec<String>,
    pub skill_components: SkillComponents,
    #[serde(rename = "SkillQ_raw")]
    pub skill_q_raw: f64,
    #[serde(rename = "SkillQ")]
    pub skill_q: f64,
    pub per_repeat_f_progress: Vec<f64>,
    pub pass_flags: Vec<bool>,
    pub progress_mean: f64,
    pub progress_std: f64,
    pub progress_lcb95: f64,
    #[serde(rename = "AgentBehaviorQ")]
    pub agent_behavior_q: f64,
    #[serde(rename = "AgentVarianceQ")]
    pub agent_variance_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetricsDoc {
    pub generation: u32,
    pub candidates: Vec<CandidateMetrics>,
}

/// Combined selection fitness, field names matching the run logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessEntry {
    pub skill_id: String,
    pub slot: u32,
    #[serde(rename = "pass@1")]
    pub pass_at_1: f64,
    #[serde(rename = "SelectQ")]
    pub select_q: f64,
    pub robust_utility: f64,
    #[serde(rename = "SkillQ")]
    pub skill_q: f64,
    #[serde(rename = "AgentBehaviorQ")]
    pub agent_behavior_q: f64,
    pub progress_lcb95: f64,
    pub progress_mean: f64,
    #[serde(rename = "AgentVarianceQ")]
    pub agent_variance_q: f64,
    pub invalid: bool,
}

impl FitnessEntry {
    pub fn from_evaluation(e: &CandidateEvaluation) -> Self {
        Self {
            skill_id: e.skill_id.clone(),
            slot: e.slot,
            pass_at_1: e.pass_rate,
            select_q: e.select_q,
            robust_utility: e.robust_utility,
            skill_q: e.skill_q,
            agent_behavior_q: e.progress.progress_q,
            progress_lcb95: e.progress.lcb,
            progress_mean: e.progress.mean,
            agent_variance_q: e.progress.variance_q,
            invalid: e.invalid,
        }
    }

    pub fn to_evaluation(&self) -> CandidateEvaluation {
        CandidateEvaluation {
            skill_id: self.skill_id.clone(),
            slot: self.slot,
            pass_rate: self.pass_at_1,
            progress: ProgressAggregate {
                scores: Vec::new(),
                mean: self.progress_mean,
                stddev: 0.0,
                lcb: self.progress_lcb95,
                progress_q: self.agent_behavior_q,
                variance_q: self.agent_variance_q,
            },
            skill_q: self.skill_q,
            robust_utility: self.robust_utility,
            invalid: self.invalid,
            select_q: self.select_q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFitnessDoc {
    pub generation: u32,
    pub epsilon: f64,
    pub tau: f64,
    pub candidates: Vec<FitnessEntry>,
    pub survivor: String,
}

/// One sanitizer report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizationLine {
    pub generation: u32,
    pub skill_id: String,
    #[serde(flatten)]
    pub report: SanitizerReport,
}

/// One lesson-integration line: which bank lessons a child absorbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationLine {
    pub generation: u32,
    pub skill_id: String,
    pub integrated_lessons: Vec<String>,
    pub coverage: f64,
    pub parent_coverage: f64,
}

/// One mutation-health line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthLine {
    pub generation: u32,
    #[serde(flatten)]
    pub health: MutationHealth,
}

/// Single-writer handle on one run directory.
#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    /// Creates (or reopens) a run directory.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, TelemetryError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| TelemetryError::Io {
            path: root.display().to_string(),
            source: e,
        })?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn family_path(&self, generation: Option<u32>, family: ArtifactFamily) -> PathBuf {
        match generation {
            Some(g) if family.is_per_generation() => {
                self.root.join(format!("gen{g}")).join(family.file_name())
            }
            _ => self.root.join(family.file_name()),
        }
    }

    /// Writes one artifact. Line families append a single record atomically;
    /// document families replace the file after moving any existing version
    /// to a numbered backup.
    pub fn write_artifact(
        &self,
        generation: Option<u32>,
        family: ArtifactFamily,
        payload: &ArtifactPayload,
    ) -> Result<PathBuf, TelemetryError> {
        validate_payload(family, payload)?;
        let path = self.family_path(generation, family);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| TelemetryError::Io {
                path: parent.display().to_string(),
                source: e,
            })?;
        }
        let io_err = |e: std::io::Error| TelemetryError::Io {
            path: path.display().to_string(),
            source: e,
        };
        match payload {
            ArtifactPayload::Json(value) if family.is_line_family() => {
                let mut line = serde_json::to_string(value).map_err(|e| {
                    TelemetryError::SchemaViolation {
                        family: family.file_name().to_string(),
                        reason: e.to_string(),
                    }
                })?;
                line.push('\n');
                let mut file =
                    fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err)?;
                // One write call per record keeps appends atomic units.
                file.write_all(line.as_bytes()).map_err(io_err)?;
            }
            ArtifactPayload::Json(value) => {
                let text = serde_json::to_string_pretty(value).map_err(|e| {
                    TelemetryError::SchemaViolation {
                        family: family.file_name().to_string(),
                        reason: e.to_string(),
                    }
                })?;
                self.replace_with_backup(&path, &text)?;
            }
            ArtifactPayload::Text(text) => {
                if family.is_line_family() {
                    return Err(TelemetryError::SchemaViolation {
                        family: family.file_name().to_string(),
                        reason: "line families take JSON records".to_string(),
                    });
                }
                self.replace_with_backup(&path, text)?;
            }
        }
        Ok(path)
    }

    fn replace_with_backup(&self, path: &Path, content: &str) -> Result<(), TelemetryError> {
        let io_err = |e: std::io::Error| TelemetryError::Io {
            path: path.display().to_string(),
            source: e,
        };
        if path.exists() {
            let mut version = 1;
            loop {
                let backup = path.with_file_name(format!(
                    "{}.{version}.bak",
                    path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact")
                ));
                if !backup.exists() {
                    fs::rename(path, &backup).map_err(io_err)?;
                    break;
                }
                version += 1;
            }
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, content).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)?;
        Ok(())
    }

    fn write_json<T: Serialize>(
        &self,
        generation: Option<u32>,
        family: ArtifactFamily,
        value: &T,
    ) -> Result<(), TelemetryError> {
        let json = serde_json::to_value(value).map_err(|e| TelemetryError::SchemaViolation {
            family: family.file_name().to_string(),
            reason: e.to_string(),
        })?;
        self.write_artifact(generation, family, &ArtifactPayload::Json(json))?;
        Ok(())
    }

    pub fn write_status(&self, status: &StatusDoc) -> Result<(), TelemetryError> {
        self.write_json(None, ArtifactFamily::Status, status)
    }

    pub fn write_run_config(&self, config: &RunConfig) -> Result<(), TelemetryError> {
        self.write_json(None, ArtifactFamily::RunConfig, config)
    }

    pub fn write_execution_contract(
        &self,
        contract: &ExecutionContract,
    ) -> Result<(), TelemetryError> {
        self.write_json(None, ArtifactFamily::ExecutionContract, contract)
    }

    pub fn write_preflight(&self, report: &PreflightReport) -> Result<(), TelemetryError> {
        self.write_json(None, ArtifactFamily::PreflightReport, report)
    }

    pub fn append_rollout_diagnostic(
        &self,
        diagnostic: &RolloutDiagnostic,
    ) -> Result<(), TelemetryError> {
        self.write_json(
            Some(diagnostic.generation),
            ArtifactFamily::RolloutDiagnostics,
            diagnostic,
        )
    }

    pub fn write_generation_metrics(
        &self,
        doc: &GenerationMetricsDoc,
    ) -> Result<(), TelemetryError> {
        self.write_json(Some(doc.generation), ArtifactFamily::GenerationMetrics, doc)
    }

    pub fn write_selection_fitness(&self, doc: &SelectionFitnessDoc) -> Result<(), TelemetryError> {
        self.write_json(Some(doc.generation), ArtifactFamily::SelectionFitness, doc)
    }

    pub fn write_oracle_feedback(
        &self,
        generation: u32,
        summary: &OracleSummary,
    ) -> Result<(), TelemetryError> {
        let mut text = format!(
            "# Oracle feedback, generation {}\n\nbest={:.6} mean={:.6} worst={:.6}\n\n{}\n",
            summary.generation, summary.best, summary.mean, summary.worst, summary.rollup
        );
        for (label, lessons) in
            [("KEEP", &summary.keep), ("ADD", &summary.add), ("REMOVE", &summary.remove)]
        {
            for lesson in lessons {
                text.push_str(&format!("{label}: {lesson}\n"));
            }
        }
        self.write_artifact(
            Some(generation),
            ArtifactFamily::OracleFeedback,
            &ArtifactPayload::Text(text),
        )?;
        Ok(())
    }

    pub fn write_lesson_bank(
        &self,
        generation: u32,
        bank: &LessonBank,
    ) -> Result<(), TelemetryError> {
        let mut text = String::from("# Lesson bank\n\n");
        for lesson in &bank.entries {
            let tag = match lesson.tag {
                LessonTag::Keep => "KEEP",
                LessonTag::Add => "ADD",
                LessonTag::Remove => "REMOVE",
            };
            let critical = if bank.critical_directives.contains(&lesson.lesson_id) {
                " [critical]"
            } else {
                ""
            };
            let flagged = if lesson.from_invalid_candidate {
                " [from-invalid]"
            } else {
                ""
            };
            text.push_str(&format!(
                "- {} ({}, gen {}){}{}: {}\n",
                lesson.lesson_id, tag, lesson.source_generation, critical, flagged, lesson.text
            ));
        }
        self.write_artifact(
            Some(generation),
            ArtifactFamily::LessonBank,
            &ArtifactPayload::Text(text),
        )?;
        Ok(())
    }

    pub fn write_mutation_handoff(&self, handoff: &MutationHandoff) -> Result<(), TelemetryError> {
        let text = format!(
            "# Mutation handoff, generation {}\n\nsurvivor={}\nEFFECTIVE selection {:+.3} pass \
             {:+.3} progress {:+.3}\nlesson_bank={}\n",
            handoff.generation,
            handoff.survivor_id,
            handoff.selection_delta,
            handoff.pass_delta,
            handoff.progress_delta,
            handoff.lesson_bank_ref
        );
        self.write_artifact(
            Some(handoff.generation),
            ArtifactFamily::MutationHandoff,
            &ArtifactPayload::Text(text),
        )?;
        Ok(())
    }

    pub fn write_survivor_skill(
        &self,
        generation: u32,
        skill: &Skill,
    ) -> Result<(), TelemetryError> {
        let text = render_skill(skill);
        self.write_artifact(
            Some(generation),
            ArtifactFamily::SurvivorSkill,
            &ArtifactPayload::Text(text),
        )?;
        Ok(())
    }

    pub fn write_best_skill(&self, skill: &Skill) -> Result<(), TelemetryError> {
        self.write_artifact(None, ArtifactFamily::BestSkill, &ArtifactPayload::Text(render_skill(skill)))?;
        Ok(())
    }

    pub fn append_sanitization(&self, line: &SanitizationLine) -> Result<(), TelemetryError> {
        self.write_json(Some(line.generation), ArtifactFamily::SkillSanitization, line)
    }

    pub fn append_integration(&self, line: &IntegrationLine) -> Result<(), TelemetryError> {
        self.write_json(Some(line.generation), ArtifactFamily::SkillIntegration, line)
    }

    pub fn append_mutation_health(&self, line: &HealthLine) -> Result<(), TelemetryError> {
        self.write_json(Some(line.generation), ArtifactFamily::MutationHealth, line)
    }

    /// Generation numbers present on disk, ascending.
    pub fn generations(&self) -> Result<Vec<u32>, TelemetryError> {
        let mut generations = Vec::new();
        let entries = fs::read_dir(&self.root).map_err(|e| TelemetryError::Io {
            path: self.root.display().to_string(),
            source: e,
        })?;
        for entry in entries.filter_map(Result::ok) {
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(rest) = name.strip_prefix("gen") {
                if let Ok(g) = rest.parse::<u32>() {
                    generations.push(g);
                }
            }
        }
        generations.sort_unstable();
        Ok(generations)
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(
        &self,
        generation: Option<u32>,
        family: ArtifactFamily,
    ) -> Result<T, TelemetryError> {
        let path = self.family_path(generation, family);
        if !path.exists() {
            return Err(TelemetryError::MissingArtifact {
                family: family.file_name().to_string(),
                path: self.root.display().to_string(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| TelemetryError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| TelemetryError::SchemaDrift {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn read_lines<T: for<'de> Deserialize<'de>>(
        &self,
        generation: Option<u32>,
        family: ArtifactFamily,
    ) -> Result<Vec<T>, TelemetryError> {
        let path = self.family_path(generation, family);
        if !path.exists() {
            return Err(TelemetryError::MissingArtifact {
                family: family.file_name().to_string(),
                path: self.root.display().to_string(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| TelemetryError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut out = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(line).map_err(|e| TelemetryError::SchemaDrift {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?);
        }
        Ok(out)
    }
}

fn render_skill(skill: &Skill) -> String {
    format!(
        "<!-- skill_id: {} generation: {} slot: {} origin: {:?} -->\n{}",
        skill.skill_id, skill.generation, skill.slot, skill.origin, skill.body
    )
}

fn validate_payload(
    family: ArtifactFamily,
    payload: &ArtifactPayload,
) -> Result<(), TelemetryError> {
    let violation = |reason: &str| TelemetryError::SchemaViolation {
        family: family.file_name().to_string(),
        reason: reason.to_string(),
    };
    match payload {
        ArtifactPayload::Text(text) => {
            if text.trim().is_empty() {
                return Err(violation("empty document"));
            }
        }
        ArtifactPayload::Json(value) => {
            let Some(object) = value.as_object() else {
                return Err(violation("payload must be a JSON object"));
            };
            if object.is_empty() {
                return Err(violation("empty payload"));
            }
            let required: &[&str] = match family {
                ArtifactFamily::RolloutDiagnostics => {
                    &["generation", "slot", "repeat", "skill_id", "outcome", "reward", "record"]
                }
                ArtifactFamily::GenerationMetrics => &["generation", "candidates"],
                ArtifactFamily::SelectionFitness => &["generation", "candidates", "survivor"],
                ArtifactFamily::Status => &["run_id", "task_id", "state"],
                ArtifactFamily::RunConfig => &["population_size", "generations", "repeats"],
                ArtifactFamily::ExecutionContract => &["allowed_tools", "visible_paths"],
                ArtifactFamily::MutationHealth => &["generation", "ok"],
                ArtifactFamily::SkillSanitization => &["generation", "skill_id"],
                ArtifactFamily::SkillIntegration => &["generation", "skill_id"],
                _ => &[],
            };
            for key in required {
                let present = object.get(*key).map(|v| !v.is_null()).unwrap_or(false);
                if !present {
                    return Err(violation(&format!("missing mandatory field {key}")));
                }
            }
            if let Some(skill_id) = object.get("skill_id").and_then(|v| v.as_str()) {
                if skill_id.is_empty() {
                    return Err(violation("empty skill_id"));
                }
            }
        }
    }
    Ok(())
}
