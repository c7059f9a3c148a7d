//! The generation update: evaluate the population over repeated rollouts,
//! select the survivor pass-dominantly, summarize evidence through the
//! oracle, update the lesson bank, and mutate-with-repair into the next
//! population. The carried survivor always occupies slot 0 and no
//! unevaluated child can become the next parent.

pub mod mutator;
pub mod oracle;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mutator::{LlmMutator, Mutator, RuleMutator};
pub use oracle::{LlmOracle, Oracle, OracleInput, OracleLessons, ProposedLesson, RuleOracle};

use crate::domain::{
    carried_skill_id, child_skill_id, validate_run_config, ConfigError, Directive, DirectiveTag,
    ExecutionContract, Lesson, LessonBank, LessonTag, MutationHandoff, OracleSummary, Phase,
    RolloutRecord, RunConfig, Skill, SkillOrigin, Task, VerifierOutcome,
};
use crate::metrics::{
    aggregate_progress, compute_pass_rate, compute_progress, compute_skill_q, EstimatorContext,
    MetricsError, ProgressEstimator, RuleSkillEstimator, SkillComponentEstimator, SkillComponents,
    SkillScoringInput, TraceProgressEstimator,
};
use crate::rollout::{
    build_contract, run_rollout, AgentFactory, EnvironmentProvider, ScenarioLibrary,
    ScriptedAgentFactory, ScriptedStyle,
};
use crate::sanitizer::{
    compute_mutation_health, sanitize, MutationHealth, SanitizerReport,
};
use crate::selection::{
    apply_validity_gate, compute_epsilon, compute_robust_utility, compute_select_q,
    select_survivor, CandidateEvaluation, SelectionError,
};
use crate::telemetry::{
    GenerationMetricsDoc, CandidateMetrics, FitnessEntry, HealthLine, IntegrationLine,
    PreflightCheck, PreflightReport, RolloutDiagnostic, RunStore, SanitizationLine,
    SelectionFitnessDoc, StatusDoc, TelemetryError,
};
use crate::text::{body_lines, is_negated, DirectiveMatcher, KeywordMatcher};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed skill rejected by sanitizer: {0:?}")]
    InvalidSeed(Vec<String>),
    #[error("one seed skill required per task ({tasks} tasks, {seeds} seeds)")]
    SeedMismatch { tasks: usize, seeds: usize },
    #[error("preflight failed: {0}")]
    Preflight(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One candidate skill plus its creation-time text scores.
///
/// Skill content is scored once, when the text is created (seed load or
/// mutation repair); a survivor carried into later generations keeps its
/// scores because its text did not change. Rollout statistics, by contrast,
/// are remeasured every generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMember {
    pub skill: Skill,
    pub components: SkillComponents,
    pub skill_q_raw: f64,
    pub skill_q: f64,
    pub report: SanitizerReport,
}

/// Service bundle the loop coordinates.
pub struct LoopServices {
    pub environments: Box<dyn EnvironmentProvider>,
    pub agents: Box<dyn AgentFactory>,
    pub oracle: Box<dyn Oracle>,
    pub mutator: Box<dyn Mutator>,
    pub skill_estimator: Box<dyn SkillComponentEstimator>,
    pub progress_estimator: Box<dyn ProgressEstimator>,
}

impl LoopServices {
    /// Fully deterministic services over a scenario library: scripted
    /// agents, rule oracle, rule mutator, trace estimators.
    pub fn deterministic(library: ScenarioLibrary, style: ScriptedStyle) -> Self {
        Self {
            environments: Box::new(library.clone()),
            agents: Box::new(ScriptedAgentFactory::new(library, style)),
            oracle: Box::new(RuleOracle),
            mutator: Box::new(RuleMutator),
            skill_estimator: Box::new(RuleSkillEstimator::default()),
            progress_estimator: Box::new(TraceProgressEstimator),
        }
    }
}

/// Everything one generation produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u32,
    pub population: Vec<Skill>,
    pub evaluations: Vec<CandidateEvaluation>,
    pub survivor_id: String,
    pub oracle_summary: Option<OracleSummary>,
    pub handoff: Option<MutationHandoff>,
    pub lesson_bank_after: LessonBank,
    /// Rollouts grouped per population slot.
    pub rollouts: Vec<Vec<RolloutRecord>>,
}

impl GenerationRecord {
    pub fn survivor_evaluation(&self) -> Option<&CandidateEvaluation> {
        self.evaluations.iter().find(|e| e.skill_id == self.survivor_id)
    }
}

/// Per-task run history returned by [`run_experiment`].
#[derive(Debug)]
pub struct TaskRunHistory {
    pub task_id: String,
    pub run_root: PathBuf,
    pub generations: Vec<GenerationRecord>,
    pub final_survivor: Option<Skill>,
    pub error: Option<String>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn infra_record(task: &Task, skill: &Skill, repeat: u32) -> RolloutRecord {
    RolloutRecord {
        task_id: task.task_id.clone(),
        skill_id: skill.skill_id.clone(),
        repeat_index: repeat,
        events: Vec::new(),
        feedback_calls_used: 0,
        final_outcome: VerifierOutcome {
            passed: false,
            tests_total: None,
            tests_failed: None,
            phase: Phase::P0,
            exit_code: -1,
            sanitized_tail: "fail:infra harness error".to_string(),
        },
        phase_reached: Phase::P0,
        progress: None,
        infra_failure: true,
    }
}

fn one_rollout(
    task: &Task,
    skill: &Skill,
    repeat: u32,
    config: &RunConfig,
    contract: &ExecutionContract,
    services: &LoopServices,
) -> RolloutRecord {
    match services.environments.create(task) {
        Err(_) => infra_record(task, skill, repeat),
        Ok(env) => run_rollout(
            task,
            skill,
            repeat,
            services.agents.as_ref(),
            env.as_ref(),
            config,
            contract,
        )
        .unwrap_or_else(|_| infra_record(task, skill, repeat)),
    }
}

fn score_member(
    skill: Skill,
    parent: Option<&Skill>,
    bank: &LessonBank,
    contract: &ExecutionContract,
    report: SanitizerReport,
    services: &LoopServices,
) -> Result<PopulationMember, LoopError> {
    let input = SkillScoringInput {
        skill: &skill,
        parent,
        bank,
        contract,
        report: &report,
    };
    let components = services.skill_estimator.estimate(&input);
    let q = compute_skill_q(&components)?;
    Ok(PopulationMember {
        skill,
        components,
        skill_q_raw: q.raw,
        skill_q: q.gated,
        report,
    })
}

/// Re-materializes a survivor for another generation, inheriting its
/// creation-time text scores.
fn carried_copy(parent: &PopulationMember, generation: u32, slot: u32) -> PopulationMember {
    let skill_id = if slot == 0 {
        carried_skill_id(generation)
    } else {
        format!("gen{generation}_ind{slot}")
    };
    let mut skill = parent.skill.clone();
    skill.skill_id = skill_id;
    skill.generation = generation;
    skill.slot = slot;
    skill.parent_id = Some(parent.skill.skill_id.clone());
    skill.origin = SkillOrigin::CarriedParent;
    PopulationMember {
        skill,
        components: parent.components,
        skill_q_raw: parent.skill_q_raw,
        skill_q: parent.skill_q,
        report: parent.report.clone(),
    }
}

/// Directive metadata derived from which bank lessons the body absorbed.
fn derive_directives(body: &str, bank: &LessonBank) -> Vec<Directive> {
    let matcher = KeywordMatcher;
    let mut directives = Vec::new();
    for lesson in &bank.entries {
        match lesson.tag {
            LessonTag::Keep | LessonTag::Add => {
                if matcher.matches(&lesson.text, body) {
                    directives.push(Directive {
                        tag: if lesson.tag == LessonTag::Keep {
                            DirectiveTag::Keep
                        } else {
                            DirectiveTag::Add
                        },
                        text: lesson.text.clone(),
                    });
                }
            }
            LessonTag::Remove => {
                let guarded = body_lines(body)
                    .iter()
                    .any(|line| is_negated(line) && matcher.matches(&lesson.text, line));
                if guarded {
                    directives.push(Directive {
                        tag: DirectiveTag::RemoveViolationCheck,
                        text: lesson.text.clone(),
                    });
                }
            }
        }
    }
    directives
}

struct ChildOutcome {
    member: PopulationMember,
    report: Option<SanitizerReport>,
    health: Option<MutationHealth>,
    integrated: Vec<String>,
}

fn create_child(
    parent: &PopulationMember,
    generation: u32,
    slot: u32,
    bank: &LessonBank,
    handoff: Option<&MutationHandoff>,
    contract: &ExecutionContract,
    services: &LoopServices,
) -> Result<ChildOutcome, LoopError> {
    let body = match services.mutator.propose(&parent.skill, handoff, bank, contract, slot) {
        Ok(body) => body,
        // Mutator failures degrade to parent copies, never abort.
        Err(_) => {
            return Ok(ChildOutcome {
                member: carried_copy(parent, generation, slot),
                report: None,
                health: None,
                integrated: Vec::new(),
            })
        }
    };
    let proposal = Skill {
        skill_id: child_skill_id(generation, slot),
        generation,
        slot,
        parent_id: Some(parent.skill.skill_id.clone()),
        body,
        directives: Vec::new(),
        origin: SkillOrigin::MutatedChild,
        validity: crate::domain::Validity::Valid,
        invalid_reasons: Vec::new(),
    };
    let (mut repaired, report) = sanitize(&proposal, contract, bank);
    repaired.directives = derive_directives(&repaired.body, bank);
    let health = compute_mutation_health(&repaired, &parent.skill, bank, &report);

    let matcher = KeywordMatcher;
    let integrated: Vec<String> = bank
        .entries
        .iter()
        .filter(|l| {
            matcher.matches(&l.text, &repaired.body) && !matcher.matches(&l.text, &parent.skill.body)
        })
        .map(|l| l.lesson_id.clone())
        .collect();

    let member = if health.ok {
        score_member(repaired, Some(&parent.skill), bank, contract, report.clone(), services)?
    } else {
        // Parent-preserving fallback.
        carried_copy(parent, generation, slot)
    };
    Ok(ChildOutcome {
        member,
        report: Some(report),
        health: Some(health),
        integrated,
    })
}

fn log_child(
    store: &RunStore,
    generation: u32,
    skill_id: &str,
    outcome: &ChildOutcome,
) -> Result<(), TelemetryError> {
    if let Some(report) = &outcome.report {
        store.append_sanitization(&SanitizationLine {
            generation,
            skill_id: skill_id.to_string(),
            report: report.clone(),
        })?;
    }
    if let Some(health) = &outcome.health {
        store.append_mutation_health(&HealthLine {
            generation,
            health: health.clone(),
        })?;
        store.append_integration(&IntegrationLine {
            generation,
            skill_id: skill_id.to_string(),
            integrated_lessons: outcome.integrated.clone(),
            coverage: health.coverage,
            parent_coverage: health.parent_coverage,
        })?;
    }
    Ok(())
}

/// Builds generation 1: the sanitized seed at slot 0 plus K-1 seed-derived
/// children. An invalid seed is a hard error; there is nothing to fall
/// back to before the first generation.
pub fn build_initial_population(
    seed_body: &str,
    config: &RunConfig,
    bank: &LessonBank,
    contract: &ExecutionContract,
    services: &LoopServices,
    store: &RunStore,
) -> Result<Vec<PopulationMember>, LoopError> {
    let seed = Skill::seed(carried_skill_id(1), 1, seed_body);
    let (repaired_seed, seed_report) = sanitize(&seed, contract, bank);
    store.append_sanitization(&SanitizationLine {
        generation: 1,
        skill_id: repaired_seed.skill_id.clone(),
        report: seed_report.clone(),
    })?;
    if !seed_report.is_valid() {
        return Err(LoopError::InvalidSeed(seed_report.invalid_reasons));
    }
    let seed_member = score_member(repaired_seed, None, bank, contract, seed_report, services)?;
    let mut members = vec![seed_member];
    for slot in 1..config.population_size {
        let outcome = create_child(&members[0], 1, slot, bank, None, contract, services)?;
        log_child(store, 1, &outcome.member.skill.skill_id, &outcome)?;
        members.push(outcome.member);
    }
    Ok(members)
}

/// Executes one generation: K x R rollouts (concurrently, joined before
/// selection), dense metrics, SelectQ, survivor selection, and artifact
/// writes. Per-rollout harness failures become failed rollouts; only
/// telemetry failures abort.
pub fn run_generation(
    generation: u32,
    members: &[PopulationMember],
    task: &Task,
    config: &RunConfig,
    contract: &ExecutionContract,
    services: &LoopServices,
    store: &RunStore,
) -> Result<GenerationRecord, LoopError> {
    let repeats = config.repeats;
    let estimator_ctx = EstimatorContext::from_task(task, config.turn_cap);

    // Fan out all K x R rollouts; selection waits on the join barrier.
    let mut slots: Vec<Vec<Option<RolloutRecord>>> =
        members.iter().map(|_| (0..repeats).map(|_| None).collect()).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (slot, member) in members.iter().enumerate() {
            for repeat in 0..repeats {
                let skill = &member.skill;
                handles.push((
                    slot,
                    repeat,
                    scope.spawn(move || one_rollout(task, skill, repeat, config, contract, services)),
                ));
            }
        }
        for (slot, repeat, handle) in handles {
            let record =
                handle.join().unwrap_or_else(|_| infra_record(task, &members[slot].skill, repeat));
            slots[slot][repeat as usize] = Some(record);
        }
    });
    let mut grouped: Vec<Vec<RolloutRecord>> = slots
        .into_iter()
        .map(|repeats| repeats.into_iter().map(|r| r.expect("joined")).collect())
        .collect();

    // Dense per-rollout components, then diagnostics in (slot, repeat) order
    // so files are byte-stable regardless of scheduling.
    let mut per_slot_scores: Vec<Vec<f64>> = Vec::with_capacity(grouped.len());
    for (slot, rollouts) in grouped.iter_mut().enumerate() {
        let mut scores = Vec::with_capacity(rollouts.len());
        for record in rollouts.iter_mut() {
            let components = services.progress_estimator.estimate(record, &estimator_ctx)?;
            record.progress = Some(components);
            let f_progress = compute_progress(&components)?;
            scores.push(f_progress);
            store.append_rollout_diagnostic(&RolloutDiagnostic::new(
                generation,
                slot as u32,
                &task.category_id,
                record.clone(),
                components,
                f_progress,
            ))?;
        }
        per_slot_scores.push(scores);
    }

    let epsilon = compute_epsilon(config.repeats, config.task_count);
    let parent_skill_q = members[0].skill_q;
    let mut evaluations = Vec::with_capacity(members.len());
    let mut candidate_metrics = Vec::with_capacity(members.len());
    for (slot, (member, rollouts)) in members.iter().zip(&grouped).enumerate() {
        let outcomes: Vec<VerifierOutcome> =
            rollouts.iter().map(|r| r.final_outcome.clone()).collect();
        let pass_rate = compute_pass_rate(&outcomes)?;
        let progress = aggregate_progress(&per_slot_scores[slot], repeats)?;
        let invalid = apply_validity_gate(
            member.skill_q,
            parent_skill_q,
            !member.report.is_valid(),
            slot == 0,
            config.semantic_floor_tau,
        );
        let robust_utility = compute_robust_utility(progress.lcb, progress.mean, member.skill_q)?;
        let select_q = compute_select_q(pass_rate, robust_utility, invalid, epsilon);
        candidate_metrics.push(CandidateMetrics {
            skill_id: member.skill.skill_id.clone(),
            slot: slot as u32,
            origin: member.skill.origin,
            parent_id: member.skill.parent_id.clone(),
            sanitizer_valid: member.report.is_valid(),
            invalid_reasons: member.report.invalid_reasons.clone(),
            skill_components: member.components,
            skill_q_raw: member.skill_q_raw,
            skill_q: member.skill_q,
            per_repeat_f_progress: per_slot_scores[slot].clone(),
            pass_flags: rollouts.iter().map(|r| r.final_outcome.passed).collect(),
            progress_mean: progress.mean,
            progress_std: progress.stddev,
            progress_lcb95: progress.lcb,
            agent_behavior_q: progress.progress_q,
            agent_variance_q: progress.variance_q,
        });
        evaluations.push(CandidateEvaluation {
            skill_id: member.skill.skill_id.clone(),
            slot: slot as u32,
            pass_rate,
            progress,
            skill_q: member.skill_q,
            robust_utility,
            invalid,
            select_q,
        });
    }

    let previous_survivor =
        if generation <= 1 { None } else { Some(members[0].skill.skill_id.as_str()) };
    let survivor_id = select_survivor(&evaluations, previous_survivor)?;

    store.write_generation_metrics(&GenerationMetricsDoc {
        generation,
        candidates: candidate_metrics,
    })?;
    store.write_selection_fitness(&SelectionFitnessDoc {
        generation,
        epsilon,
        tau: config.semantic_floor_tau,
        candidates: evaluations.iter().map(FitnessEntry::from_evaluation).collect(),
        survivor: survivor_id.clone(),
    })?;
    if let Some(survivor) = members.iter().find(|m| m.skill.skill_id == survivor_id) {
        store.write_survivor_skill(generation, &survivor.skill)?;
    }

    Ok(GenerationRecord {
        generation,
        population: members.iter().map(|m| m.skill.clone()).collect(),
        evaluations,
        survivor_id,
        oracle_summary: None,
        handoff: None,
        lesson_bank_after: LessonBank::default(),
        rollouts: grouped,
    })
}

/// Runs the oracle over the whole population's evidence and folds new
/// lessons into the bank. Oracle failures degrade to a lesson-free summary.
pub fn summarize_generation(
    record: &mut GenerationRecord,
    task: &Task,
    contract: &ExecutionContract,
    bank: &mut LessonBank,
    services: &LoopServices,
    store: &RunStore,
) -> Result<(), LoopError> {
    let input = OracleInput {
        generation: record.generation,
        task,
        contract,
        population: &record.population,
        evaluations: &record.evaluations,
        rollouts: &record.rollouts,
        survivor_id: &record.survivor_id,
        bank,
    };
    let lessons = services.oracle.summarize(&input).unwrap_or_else(|e| OracleLessons {
        rollup: format!("oracle unavailable ({e}); no lessons extracted"),
        lessons: Vec::new(),
    });

    let matcher = KeywordMatcher;
    let mut keep = Vec::new();
    let mut add = Vec::new();
    let mut remove = Vec::new();
    for proposed in &lessons.lessons {
        match proposed.tag {
            LessonTag::Keep => keep.push(proposed.text.clone()),
            LessonTag::Add => add.push(proposed.text.clone()),
            LessonTag::Remove => remove.push(proposed.text.clone()),
        }
        let duplicate = bank
            .entries
            .iter()
            .any(|l| l.tag == proposed.tag && matcher.matches(&l.text, &proposed.text));
        if duplicate {
            continue;
        }
        // Lessons sourced only from invalid candidates are banked but
        // flagged, so downstream consumers can weigh them.
        let from_invalid = !proposed.source_slots.is_empty()
            && proposed.source_slots.iter().all(|slot| {
                record
                    .evaluations
                    .get(*slot as usize)
                    .map(|e| e.invalid)
                    .unwrap_or(false)
            });
        let lesson_id = bank.next_lesson_id();
        bank.entries.push(Lesson {
            lesson_id: lesson_id.clone(),
            tag: proposed.tag,
            text: proposed.text.clone(),
            source_generation: record.generation,
            from_invalid_candidate: from_invalid,
        });
        if proposed.critical {
            bank.critical_directives.push(lesson_id);
        }
    }

    let valid_scores: Vec<f64> = record
        .evaluations
        .iter()
        .filter(|e| !e.invalid)
        .map(|e| e.select_q)
        .collect();
    let scores = if valid_scores.is_empty() {
        record.evaluations.iter().map(|e| e.select_q).collect()
    } else {
        valid_scores
    };
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let summary = OracleSummary {
        generation: record.generation,
        best,
        mean,
        worst,
        rollup: lessons.rollup,
        keep,
        add,
        remove,
    };
    store.write_oracle_feedback(record.generation, &summary)?;
    store.write_lesson_bank(record.generation, bank)?;
    record.oracle_summary = Some(summary);
    record.lesson_bank_after = bank.clone();
    Ok(())
}

/// Builds the next population from a completed generation: summarize, hand
/// off, then fill slots 1..K-1 with repaired children of the survivor.
/// Children failing mutation health are replaced by survivor copies.
#[allow(clippy::too_many_arguments)]
pub fn build_next_population(
    record: &mut GenerationRecord,
    members: &[PopulationMember],
    task: &Task,
    config: &RunConfig,
    contract: &ExecutionContract,
    bank: &mut LessonBank,
    services: &LoopServices,
    store: &RunStore,
) -> Result<Vec<PopulationMember>, LoopError> {
    if record.oracle_summary.is_none() {
        summarize_generation(record, task, contract, bank, services, store)?;
    }
    let survivor = members
        .iter()
        .find(|m| m.skill.skill_id == record.survivor_id)
        .ok_or_else(|| SelectionError::MissingScore(record.survivor_id.clone()))?;
    let survivor_eval = record
        .survivor_evaluation()
        .ok_or_else(|| SelectionError::MissingScore(record.survivor_id.clone()))?;
    let parent_eval = &record.evaluations[0];
    let handoff = MutationHandoff {
        generation: record.generation,
        survivor_id: record.survivor_id.clone(),
        selection_delta: survivor_eval.select_q - parent_eval.select_q,
        pass_delta: survivor_eval.pass_rate - parent_eval.pass_rate,
        progress_delta: survivor_eval.progress.progress_q - parent_eval.progress.progress_q,
        lesson_bank_ref: format!("gen{}/lesson_bank.md", record.generation),
    };
    store.write_mutation_handoff(&handoff)?;
    record.handoff = Some(handoff.clone());

    let next_generation = record.generation + 1;
    let mut next = vec![carried_copy(survivor, next_generation, 0)];
    for slot in 1..config.population_size {
        let outcome = create_child(
            survivor,
            next_generation,
            slot,
            bank,
            Some(&handoff),
            contract,
            services,
        )?;
        log_child(store, next_generation, &outcome.member.skill.skill_id, &outcome)?;
        next.push(outcome.member);
    }
    Ok(next)
}

fn preflight(
    task: &Task,
    seed_body: &str,
    config: &RunConfig,
    services: &LoopServices,
) -> PreflightReport {
    let mut checks = Vec::new();
    let mut check = |name: &str, result: Result<(), String>| {
        checks.push(PreflightCheck {
            name: name.to_string(),
            ok: result.is_ok(),
            note: result.err().unwrap_or_default(),
        });
    };
    check("run_config", validate_run_config(config).map_err(|e| e.to_string()));
    check("task", task.validate());
    check(
        "environment",
        services.environments.create(task).map(|_| ()).map_err(|e| e.to_string()),
    );
    check(
        "seed_skill",
        if seed_body.trim().is_empty() {
            Err("seed skill body is empty".to_string())
        } else {
            Ok(())
        },
    );
    let registry = crate::rollout::ToolRegistry::for_run(config.dense_feedback_enabled);
    check(
        "tool_registry",
        if registry.contains("verify_feedback") == config.dense_feedback_enabled {
            Ok(())
        } else {
            Err("verify_feedback exposure does not match the dense flag".to_string())
        },
    );
    let ok = checks.iter().all(|c| c.ok);
    PreflightReport { checks, ok }
}

/// Runs the experiment over independent task-wise loops. Evidence never
/// crosses tasks; per-task failures are isolated into the returned history.
pub fn run_experiment(
    tasks: &[Task],
    seed_bodies: &[String],
    config: &RunConfig,
    services: &LoopServices,
    out_root: &Path,
    condition: &str,
) -> Result<Vec<TaskRunHistory>, LoopError> {
    validate_run_config(config)?;
    if tasks.len() != seed_bodies.len() {
        return Err(LoopError::SeedMismatch {
            tasks: tasks.len(),
            seeds: seed_bodies.len(),
        });
    }
    let mut histories = Vec::with_capacity(tasks.len());
    for (task, seed_body) in tasks.iter().zip(seed_bodies) {
        let run_root = out_root.join(format!("{}__{}", task.task_id, condition));
        match run_single_task(task, seed_body, config, services, &run_root, condition) {
            Ok(history) => histories.push(history),
            Err(error) => histories.push(TaskRunHistory {
                task_id: task.task_id.clone(),
                run_root,
                generations: Vec::new(),
                final_survivor: None,
                error: Some(error.to_string()),
            }),
        }
    }
    Ok(histories)
}

fn run_single_task(
    task: &Task,
    seed_body: &str,
    config: &RunConfig,
    services: &LoopServices,
    run_root: &Path,
    condition: &str,
) -> Result<TaskRunHistory, LoopError> {
    let store = RunStore::create(run_root)?;
    let report = preflight(task, seed_body, config, services);
    store.write_preflight(&report)?;
    if !report.ok {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.ok)
            .map(|c| c.name.as_str())
            .collect();
        return Err(LoopError::Preflight(failed.join(", ")));
    }

    let probe_env = services
        .environments
        .create(task)
        .map_err(|e| LoopError::Preflight(e.to_string()))?;
    let contract = build_contract(task, probe_env.as_ref(), config);

    let mut status = StatusDoc {
        run_id: format!("{}__{}", task.task_id, condition),
        task_id: task.task_id.clone(),
        category_id: task.category_id.clone(),
        condition: condition.to_string(),
        state: "running".to_string(),
        started_unix: now_unix(),
        finished_unix: None,
        generations_completed: 0,
        host: std::env::var("HOSTNAME").unwrap_or_else(|_| "local".to_string()),
    };
    store.write_status(&status)?;
    store.write_run_config(config)?;
    store.write_execution_contract(&contract)?;

    let result = run_task_loop(task, seed_body, config, &contract, services, &store);

    match result {
        Ok((generations, final_survivor)) => {
            status.state = "complete".to_string();
            status.finished_unix = Some(now_unix());
            status.generations_completed = generations.len() as u32;
            store.write_status(&status)?;
            store.write_best_skill(&final_survivor)?;
            Ok(TaskRunHistory {
                task_id: task.task_id.clone(),
                run_root: run_root.to_path_buf(),
                generations,
                final_survivor: Some(final_survivor),
                error: None,
            })
        }
        Err(error) => {
            status.state = "failed".to_string();
            status.finished_unix = Some(now_unix());
            store.write_status(&status)?;
            Err(error)
        }
    }
}

fn run_task_loop(
    task: &Task,
    seed_body: &str,
    config: &RunConfig,
    contract: &ExecutionContract,
    services: &LoopServices,
    store: &RunStore,
) -> Result<(Vec<GenerationRecord>, Skill), LoopError> {
    let mut bank = LessonBank::default();
    let mut generations = Vec::new();

    if !config.ea_enabled {
        // Seed-skill evaluation only: exactly R rollouts, no mutation.
        let seed = Skill::seed(carried_skill_id(1), 1, seed_body);
        let (repaired, report) = sanitize(&seed, contract, &bank);
        if !report.is_valid() {
            return Err(LoopError::InvalidSeed(report.invalid_reasons));
        }
        let member = score_member(repaired, None, &bank, contract, report, services)?;
        let members = vec![member];
        let record = run_generation(1, &members, task, config, contract, services, store)?;
        let survivor = members[0].skill.clone();
        generations.push(record);
        return Ok((generations, survivor));
    }

    let mut members =
        build_initial_population(seed_body, config, &bank, contract, services, store)?;
    let mut final_survivor = None;
    for generation in 1..=config.generations {
        let mut record =
            run_generation(generation, &members, task, config, contract, services, store)?;
        if generation < config.generations {
            let next = build_next_population(
                &mut record,
                &members,
                task,
                config,
                contract,
                &mut bank,
                services,
                store,
            )?;
            final_survivor = members
                .iter()
                .find(|m| m.skill.skill_id == record.survivor_id)
                .map(|m| m.skill.clone());
            members = next;
        } else {
            summarize_generation(&mut record, task, contract, &mut bank, services, store)?;
            final_survivor = members
                .iter()
                .find(|m| m.skill.skill_id == record.survivor_id)
                .map(|m| m.skill.clone());
        }
        generations.push(record);
    }
    let survivor = final_survivor
        .ok_or_else(|| SelectionError::MissingScore("final survivor".to_string()))?;
    Ok((generations, survivor))
}

/// The bundled default seed skill text.
pub const DEFAULT_SEED_SKILL: &str = include_str!("../../assets/seed_skill.md");
