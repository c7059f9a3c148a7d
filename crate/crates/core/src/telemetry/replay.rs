//! Replays a run directory: recomputes every dense metric and SelectQ from
//! the raw rollout diagnostics and stored skill scores, then diffs the
//! results against the persisted fitness files and survivor decisions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::RunConfig;
use crate::metrics::{aggregate_progress, compute_progress, compute_skill_q};
use crate::selection::{
    apply_validity_gate, compute_epsilon, compute_robust_utility, compute_select_q,
    select_survivor, CandidateEvaluation,
};
use crate::telemetry::{
    ArtifactFamily, GenerationMetricsDoc, RolloutDiagnostic, RunStore, SelectionFitnessDoc,
    TelemetryError,
};

/// One disagreement between stored and recomputed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDiff {
    pub generation: u32,
    pub skill_id: String,
    pub field: String,
    pub stored: String,
    pub recomputed: String,
}

/// Replay result for one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReplay {
    pub generation: u32,
    pub evaluations: Vec<CandidateEvaluation>,
    pub stored_survivor: String,
    pub recomputed_survivor: String,
}

/// Full replay report over a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReplayReport {
    pub generations: Vec<GenerationReplay>,
    pub diffs: Vec<ReplayDiff>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.diffs.is_empty()
    }
}

const TOLERANCE: f64 = 1e-9;

fn diff_field(
    diffs: &mut Vec<ReplayDiff>,
    generation: u32,
    skill_id: &str,
    field: &str,
    stored: f64,
    recomputed: f64,
) {
    if (stored - recomputed).abs() > TOLERANCE {
        diffs.push(ReplayDiff {
            generation,
            skill_id: skill_id.to_string(),
            field: field.to_string(),
            stored: format!("{stored}"),
            recomputed: format!("{recomputed}"),
        });
    }
}

/// Re-derives all dense metrics and SelectQ for every generation found in
/// the run directory and reports each disagreement with the stored values.
pub fn replay_metrics(run_dir: &Path) -> Result<ReplayReport, TelemetryError> {
    let store = RunStore::create(run_dir)?;
    let config: RunConfig = store.read_json(None, ArtifactFamily::RunConfig)?;
    let epsilon = compute_epsilon(config.repeats, config.task_count);
    let tau = config.semantic_floor_tau;

    let mut report = ReplayReport::default();
    for generation in store.generations()? {
        let diagnostics: Vec<RolloutDiagnostic> =
            store.read_lines(Some(generation), ArtifactFamily::RolloutDiagnostics)?;
        let metrics: GenerationMetricsDoc =
            store.read_json(Some(generation), ArtifactFamily::GenerationMetrics)?;
        let fitness: SelectionFitnessDoc =
            store.read_json(Some(generation), ArtifactFamily::SelectionFitness)?;
        let diffs = &mut report.diffs;

        // Recompute gated SkillQ per candidate from stored component vectors.
        let mut skill_qs = Vec::with_capacity(metrics.candidates.len());
        for candidate in &metrics.candidates {
            let q = compute_skill_q(&candidate.skill_components).map_err(|e| {
                TelemetryError::SchemaDrift {
                    path: run_dir.display().to_string(),
                    reason: e.to_string(),
                }
            })?;
            diff_field(
                diffs,
                generation,
                &candidate.skill_id,
                "SkillQ",
                candidate.skill_q,
                q.gated,
            );
            skill_qs.push(q.gated);
        }
        let parent_skill_q = *skill_qs.first().ok_or_else(|| TelemetryError::SchemaDrift {
            path: run_dir.display().to_string(),
            reason: "generation metrics holds no candidates".to_string(),
        })?;

        let mut evaluations = Vec::with_capacity(metrics.candidates.len());
        for (candidate, skill_q) in metrics.candidates.iter().zip(&skill_qs) {
            let mut lines: Vec<&RolloutDiagnostic> = diagnostics
                .iter()
                .filter(|d| d.slot == candidate.slot)
                .collect();
            lines.sort_by_key(|d| d.repeat);
            if lines.is_empty() {
                return Err(TelemetryError::SchemaDrift {
                    path: run_dir.display().to_string(),
                    reason: format!("no rollout diagnostics for slot {}", candidate.slot),
                });
            }
            // Per-rollout progress from the raw component vectors.
            let mut scores = Vec::with_capacity(lines.len());
            for line in &lines {
                let f_progress = compute_progress(&line.components).map_err(|e| {
                    TelemetryError::SchemaDrift {
                        path: run_dir.display().to_string(),
                        reason: e.to_string(),
                    }
                })?;
                diff_field(
                    diffs,
                    generation,
                    &candidate.skill_id,
                    &format!("f_progress[r{}]", line.repeat),
                    line.f_progress,
                    f_progress,
                );
                scores.push(f_progress);
            }
            let pass_rate = lines.iter().map(|l| l.reward).sum::<f64>() / lines.len() as f64;
            let progress =
                aggregate_progress(&scores, lines.len() as u32).map_err(|e| {
                    TelemetryError::SchemaDrift {
                        path: run_dir.display().to_string(),
                        reason: e.to_string(),
                    }
                })?;
            let invalid = apply_validity_gate(
                *skill_q,
                parent_skill_q,
                !candidate.sanitizer_valid,
                candidate.slot == 0,
                tau,
            );
            let robust_utility =
                compute_robust_utility(progress.lcb, progress.mean, *skill_q).map_err(|e| {
                    TelemetryError::SchemaDrift {
                        path: run_dir.display().to_string(),
                        reason: e.to_string(),
                    }
                })?;
            let select_q = compute_select_q(pass_rate, robust_utility, invalid, epsilon);

            if let Some(stored) = fitness.candidates.iter().find(|c| c.slot == candidate.slot) {
                diff_field(diffs, generation, &candidate.skill_id, "pass@1", stored.pass_at_1, pass_rate);
                diff_field(
                    diffs,
                    generation,
                    &candidate.skill_id,
                    "progress_lcb95",
                    stored.progress_lcb95,
                    progress.lcb,
                );
                diff_field(
                    diffs,
                    generation,
                    &candidate.skill_id,
                    "progress_mean",
                    stored.progress_mean,
                    progress.mean,
                );
                diff_field(
                    diffs,
                    generation,
                    &candidate.skill_id,
                    "AgentBehaviorQ",
                    stored.agent_behavior_q,
                    progress.progress_q,
                );
                diff_field(
                    diffs,
                    generation,
                    &candidate.skill_id,
                    "AgentVarianceQ",
                    stored.agent_variance_q,
                    progress.variance_q,
                );
                diff_field(
                    diffs,
                    generation,
                    &candidate.skill_id,
                    "robust_utility",
                    stored.robust_utility,
                    robust_utility,
                );
                diff_field(
                    diffs,
                    generation,
                    &candidate.skill_id,
                    "SelectQ",
                    stored.select_q,
                    select_q,
                );
                if stored.invalid != invalid {
                    diffs.push(ReplayDiff {
                        generation,
                        skill_id: candidate.skill_id.clone(),
                        field: "invalid".to_string(),
                        stored: stored.invalid.to_string(),
                        recomputed: invalid.to_string(),
                    });
                }
            } else {
                diffs.push(ReplayDiff {
                    generation,
                    skill_id: candidate.skill_id.clone(),
                    field: "fitness_entry".to_string(),
                    stored: "missing".to_string(),
                    recomputed: "present".to_string(),
                });
            }

            evaluations.push(CandidateEvaluation {
                skill_id: candidate.skill_id.clone(),
                slot: candidate.slot,
                pass_rate,
                progress,
                skill_q: *skill_q,
                robust_utility,
                invalid,
                select_q,
            });
        }

        let previous_survivor = if generation <= 1 {
            None
        } else {
            evaluations.first().map(|e| e.skill_id.as_str())
        };
        let recomputed_survivor = select_survivor(&evaluations, previous_survivor)
            .map_err(|e| TelemetryError::SchemaDrift {
                path: run_dir.display().to_string(),
                reason: e.to_string(),
            })?;
        if recomputed_survivor != fitness.survivor {
            report.diffs.push(ReplayDiff {
                generation,
                skill_id: fitness.survivor.clone(),
                field: "survivor".to_string(),
                stored: fitness.survivor.clone(),
                recomputed: recomputed_survivor.clone(),
            });
        }
        report.generations.push(GenerationReplay {
            generation,
            evaluations,
            stored_survivor: fitness.survivor.clone(),
            recomputed_survivor,
        });
    }
    Ok(report)
}
