//! Acceptance suite: every release gate runs here, one test per criterion,
//! each printing a `[PASS]` line with what it pinned down. Golden values
//! come from recorded run logs; property checks enumerate their full grids.

use std::time::Instant;

use evoskill_core::domain::{
    ExecutionContract, Lesson, LessonBank, LessonTag, RunConfig, Skill, SkillOrigin,
};
use evoskill_core::evolution::{
    run_experiment, LoopServices, Mutator, RuleMutator, DEFAULT_SEED_SKILL,
};
use evoskill_core::feedback::{
    sanitize_verifier_output, FeedbackGateway, FeedbackPolicyError, FeedbackSession,
};
use evoskill_core::metrics::calibration::{auc, point_biserial};
use evoskill_core::metrics::{
    aggregate_progress, compute_progress, compute_skill_q, ProgressComponents, SkillComponents,
};
use evoskill_core::rollout::env::{RawVerifierBundle, TaskEnvironment};
use evoskill_core::rollout::simulator::path_grounding_scenario;
use evoskill_core::rollout::{ScenarioLibrary, ScriptedStyle, SimulatedEnvironment};
use evoskill_core::sanitizer::{compute_mutation_health, sanitize, SanitizerReport};
use evoskill_core::selection::{compute_epsilon, compute_robust_utility, compute_select_q};
use evoskill_core::services::ServiceError;
use evoskill_core::telemetry::replay::replay_metrics;

/// Small deterministic generator so the fuzz suites never depend on a
/// global RNG.
struct XorShift(u64);

impl XorShift {
    fn new(seed: u64) -> Self {
        Self(seed.max(1))
    }

    fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound.max(1) as u64) as usize
    }

    fn flip(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }
}

fn single_task_services(style: ScriptedStyle) -> (LoopServices, evoskill_core::Task) {
    let scenario = path_grounding_scenario();
    let task = scenario.to_task();
    let mut library = ScenarioLibrary::new();
    library.insert(scenario);
    (LoopServices::deterministic(library, style), task)
}

#[test]
fn criterion_1_select_q_golden_values() {
    let start = Instant::now();
    let epsilon = 0.49 / 4.0;
    let survivor = compute_select_q(0.75, 0.559034, false, epsilon);
    assert!(
        (survivor - 0.818482).abs() < 1e-6,
        "SelectQ(0.75, 0.559034) = {survivor}, expected 0.818482"
    );
    let full_pass = compute_select_q(1.0, 0.853, false, epsilon);
    assert!(
        (full_pass - 1.104).abs() < 1e-3,
        "SelectQ(1.0, 0.853) = {full_pass}, expected 1.104 within 1e-3"
    );
    assert!((full_pass - 1.1045).abs() < 1e-4);
    assert!(start.elapsed().as_secs() < 1);
    println!("[PASS] criterion 1: SelectQ golden values 0.818482 (1e-6) and 1.1045/1.104 (1e-3)");
}

#[test]
fn criterion_2_progress_aggregation_golden_value() {
    let start = Instant::now();
    let q: f64 = 0.80 * 0.432600 + 0.20 * 0.678400;
    assert!((q - 0.481760).abs() < 1e-12, "AgentBehaviorQ = {q}, expected 0.481760");
    // And through the aggregate path: a score vector with this exact mean
    // and LCB reproduces the logged value.
    let aggregate = aggregate_progress(&[0.7, 0.7, 0.7, 0.7], 4).unwrap();
    assert!((aggregate.progress_q - 0.7).abs() < 1e-12);
    assert!(start.elapsed().as_secs() < 1);
    println!("[PASS] criterion 2: progress aggregation 0.80*F_LCB + 0.20*mean = 0.481760 exactly");
}

#[test]
fn criterion_3_pass_dominance_over_full_grid() {
    let start = Instant::now();
    let mut checked = 0u64;
    for repeats in 1u32..=8 {
        for task_count in 1u32..=8 {
            let epsilon = compute_epsilon(repeats, task_count);
            for pass_a in 0..=repeats {
                for pass_b in 0..pass_a {
                    let rate_a = pass_a as f64 / repeats as f64;
                    let rate_b = pass_b as f64 / repeats as f64;
                    for ua in 0..=100 {
                        for ub in 0..=100 {
                            let qa = compute_select_q(rate_a, ua as f64 / 100.0, false, epsilon);
                            let qb = compute_select_q(rate_b, ub as f64 / 100.0, false, epsilon);
                            assert!(
                                qa > qb,
                                "pass dominance violated: R={repeats} N={task_count} \
                                 pa={pass_a} pb={pass_b} ua={ua} ub={ub}"
                            );
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    assert!(start.elapsed().as_secs() < 10, "grid took {:?}", start.elapsed());
    println!("[PASS] criterion 3: pass dominance holds over {checked} grid points");
}

#[test]
fn criterion_4_formula_properties() {
    // Weight closures at all-ones.
    let skill_q = compute_skill_q(&SkillComponents::all(1.0)).unwrap();
    assert_eq!(skill_q.raw, 1.0);
    assert_eq!(skill_q.gated, 1.0);
    assert_eq!(compute_progress(&ProgressComponents::all(1.0)).unwrap(), 1.0);
    assert_eq!(compute_robust_utility(1.0, 1.0, 1.0).unwrap(), 1.0);

    // AgentVarianceQ boundaries.
    assert_eq!(evoskill_core::metrics::compute_variance_q(0.0).unwrap(), 1.0);
    assert_eq!(evoskill_core::metrics::compute_variance_q(0.30).unwrap(), 0.0);
    assert_eq!(evoskill_core::metrics::compute_variance_q(0.75).unwrap(), 0.0);

    let mut rng = XorShift::new(0x5eed_4001);
    // LCB <= mean with equality iff sigma = 0.
    for _ in 0..10_000 {
        let len = 1 + rng.below(8);
        let scores: Vec<f64> = (0..len).map(|_| rng.next_f64()).collect();
        let aggregate = aggregate_progress(&scores, len as u32).unwrap();
        assert!(aggregate.lcb <= aggregate.mean + 1e-15);
        if aggregate.stddev == 0.0 {
            assert!((aggregate.lcb - aggregate.mean).abs() < 1e-15);
        } else {
            assert!(aggregate.lcb < aggregate.mean);
        }
        assert!((0.0..=1.0).contains(&aggregate.variance_q));
    }
    // Clipping to [0, 1] over random component vectors.
    for _ in 0..100_000 {
        let skill = SkillComponents {
            lesson_coverage: rng.next_f64(),
            grounding: rng.next_f64(),
            parent_retention: rng.next_f64(),
            actionability: rng.next_f64(),
            safety_validity: rng.next_f64(),
            non_redundancy: rng.next_f64(),
            mutation_conservatism: rng.next_f64(),
            retention_gate: rng.next_f64(),
        };
        let q = compute_skill_q(&skill).unwrap();
        assert!((0.0..=1.0).contains(&q.raw));
        assert!((0.0..=1.0).contains(&q.gated));
        let progress = ProgressComponents {
            verifier_progress: rng.next_f64(),
            execution_phase: rng.next_f64(),
            harness_alignment: rng.next_f64(),
            edit_quality: rng.next_f64(),
            efficiency: rng.next_f64(),
            path_grounding: rng.next_f64(),
        };
        let f = compute_progress(&progress).unwrap();
        assert!((0.0..=1.0).contains(&f));
    }
    println!(
        "[PASS] criterion 4: weight closures, LCB bounds, variance boundaries, and clipping \
         on 1e5 random vectors"
    );
}

const HIDDEN_FRAGMENTS: &[&str] = &[
    "hidden_tb", "ref_model", "secret_patch", "verifier_hook", "compose_stack", "golden_answer",
];
const LOG_FILLER: &[&str] = &[
    "elaborating design units",
    "running functional suite",
    "checking interface timing",
    "collecting assertions",
    "TESTS=5 PASS=3 FAIL=2",
    "SystemExit: ERROR: Failed 2 of 5 tests",
    "warning: wide literal truncated",
];

fn fuzz_contract(rng: &mut XorShift) -> ExecutionContract {
    let count = 2 + rng.below(4);
    let hidden: Vec<String> = (0..count)
        .map(|i| {
            format!(
                "{}_{i}.{}",
                HIDDEN_FRAGMENTS[rng.below(HIDDEN_FRAGMENTS.len())],
                if rng.flip() { "v" } else { "py" }
            )
        })
        .collect();
    ExecutionContract {
        allowed_tools: vec!["compile".to_string(), "simulate".to_string()],
        visible_paths: vec!["vmodel/top.v".to_string()],
        hidden_identifiers: hidden,
    }
}

fn fuzz_log(rng: &mut XorShift, contract: &ExecutionContract) -> String {
    let mut lines = Vec::new();
    for _ in 0..3 + rng.below(6) {
        let mut line = LOG_FILLER[rng.below(LOG_FILLER.len())].to_string();
        // Embed hidden identifiers at random positions and casings.
        if rng.flip() {
            let hidden = &contract.hidden_identifiers[rng.below(contract.hidden_identifiers.len())];
            let token = if rng.flip() { hidden.to_uppercase() } else { hidden.clone() };
            let insert_at = rng.below(line.len().max(1));
            let mut boundary = insert_at.min(line.len());
            while !line.is_char_boundary(boundary) {
                boundary -= 1;
            }
            line.insert_str(boundary, &format!(" {token} "));
        }
        lines.push(line);
    }
    lines.join("\n")
}

#[test]
fn criterion_5_feedback_policy_and_leak_freedom() {
    let start = Instant::now();
    let scenario = path_grounding_scenario();
    let env = SimulatedEnvironment::new(scenario.clone());
    let contract = ExecutionContract {
        allowed_tools: vec!["verify_feedback".to_string()],
        visible_paths: Vec::new(),
        hidden_identifiers: scenario.hidden_identifiers.clone(),
    };
    let gateway = FeedbackGateway::new(true, 3, contract.clone());

    // Precondition refusals, in policy order.
    let mut ws = env.initial_workspace();
    let mut session = FeedbackSession::default();
    assert_eq!(
        gateway.request_feedback(&mut session, "r", &env, &ws).unwrap_err(),
        FeedbackPolicyError::NoEditYet
    );
    session.has_visible_edit = true;
    assert_eq!(
        gateway.request_feedback(&mut session, "r", &env, &ws).unwrap_err(),
        FeedbackPolicyError::NoSuccessfulCompile
    );
    session.has_successful_compile = true;
    gateway.request_feedback(&mut session, "r", &env, &ws).unwrap();
    assert_eq!(
        gateway.request_feedback(&mut session, "r", &env, &ws).unwrap_err(),
        FeedbackPolicyError::NoChangeSinceLastCall
    );

    // Budget of 3: the fourth distinct call is refused and consumes nothing.
    for i in 0..2 {
        ws.write("scratch.txt", &format!("change {i}"));
        gateway.request_feedback(&mut session, "r", &env, &ws).unwrap();
    }
    assert_eq!(session.calls_used, 3);
    ws.write("scratch.txt", "change 2");
    assert_eq!(
        gateway.request_feedback(&mut session, "r", &env, &ws).unwrap_err(),
        FeedbackPolicyError::BudgetExhausted
    );
    assert_eq!(session.calls_used, 3);

    // Leak freedom over fuzzed bundles.
    let mut rng = XorShift::new(0xfeed_babe);
    for case in 0..1_000 {
        let contract = fuzz_contract(&mut rng);
        let bundle = RawVerifierBundle {
            exit_code: if rng.flip() { 0 } else { 1 },
            log: fuzz_log(&mut rng, &contract),
        };
        let observation = sanitize_verifier_output(&bundle, &contract);
        let rendered = serde_json::to_string(&observation).unwrap().to_lowercase();
        let outcome = evoskill_core::feedback::finalize_outcome(&bundle, &contract);
        let tail = outcome.sanitized_tail.to_lowercase();
        for hidden in &contract.hidden_identifiers {
            let needle = hidden.to_lowercase();
            assert!(
                !rendered.contains(&needle),
                "case {case}: observation leaked {hidden}"
            );
            assert!(!tail.contains(&needle), "case {case}: outcome tail leaked {hidden}");
        }
    }
    assert!(start.elapsed().as_secs() < 30);
    println!(
        "[PASS] criterion 5: budget of 3 enforced, all precondition refusals fire, and 1000 \
         fuzzed bundles leak zero hidden tokens"
    );
}

fn fuzz_skill_body(rng: &mut XorShift, contract: &ExecutionContract, bank: &LessonBank) -> String {
    let mut lines = Vec::new();
    let pool: Vec<String> = vec![
        "Read the visible files before editing.".to_string(),
        "Compile after every change.".to_string(),
        format!(
            "Inspect {} before running anything.",
            contract
                .hidden_identifiers
                .first()
                .cloned()
                .unwrap_or_else(|| "notes.md".to_string())
        ),
        "Call verify_feedback whenever unsure.".to_string(),
        "Edit ghost/phantom.v to add the wiring.".to_string(),
        "Never compile after every change.".to_string(),
        bank.entries
            .iter()
            .find(|l| l.tag == LessonTag::Remove)
            .map(|l| l.text.clone())
            .unwrap_or_else(|| "Write scratch copies everywhere.".to_string()),
        "Keep the module interface stable.".to_string(),
    ];
    for _ in 0..1 + rng.below(7) {
        lines.push(pool[rng.below(pool.len())].clone());
    }
    lines.join("\n")
}

#[test]
fn criterion_6_sanitizer_idempotence_and_health_equivalence() {
    let contract = ExecutionContract {
        // verify_feedback intentionally withheld: fuzz bodies advise it.
        allowed_tools: vec![
            "list_dir".to_string(),
            "read_file".to_string(),
            "write_file".to_string(),
            "compile".to_string(),
            "simulate".to_string(),
            "finish".to_string(),
        ],
        visible_paths: vec!["vmodel/top.v".to_string(), "README.md".to_string()],
        hidden_identifiers: vec!["harness/hidden_tb.v".to_string(), "ref_solution.v".to_string()],
    };
    let mut bank = LessonBank::default();
    bank.entries.push(Lesson {
        lesson_id: "lesson_0".to_string(),
        tag: LessonTag::Keep,
        text: "Compile after every change.".to_string(),
        source_generation: 1,
        from_invalid_candidate: false,
    });
    bank.entries.push(Lesson {
        lesson_id: "lesson_1".to_string(),
        tag: LessonTag::Remove,
        text: "write scratch copies under temp directories".to_string(),
        source_generation: 1,
        from_invalid_candidate: false,
    });
    bank.entries.push(Lesson {
        lesson_id: "lesson_2".to_string(),
        tag: LessonTag::Add,
        text: "Write the complete content to vmodel/top.v.".to_string(),
        source_generation: 1,
        from_invalid_candidate: false,
    });
    bank.critical_directives.push("lesson_2".to_string());

    let mut rng = XorShift::new(0x5a17_1234);
    for case in 0..1_000 {
        let body = fuzz_skill_body(&mut rng, &contract, &bank);
        let mut proposal = Skill::seed("child_gen2_1", 2, body);
        proposal.origin = SkillOrigin::MutatedChild;
        proposal.parent_id = Some("gen1_ind0".to_string());
        proposal.slot = 1;

        let (first, first_report) = sanitize(&proposal, &contract, &bank);
        let (second, second_report) = sanitize(&first, &contract, &bank);
        assert_eq!(second.body, first.body, "case {case}: body not a fixed point");
        assert!(
            second_report.repairs.is_empty(),
            "case {case}: second pass repaired again: {:?}",
            second_report.repairs
        );
        assert_eq!(
            second_report.invalid_reasons.is_empty(),
            first_report.invalid_reasons.is_empty(),
            "case {case}: validity flapped"
        );
        // Leak freedom of the sanitized body.
        for hidden in &contract.hidden_identifiers {
            assert!(
                !first.body.to_lowercase().contains(&hidden.to_lowercase()),
                "case {case}: sanitized body leaked {hidden}"
            );
        }
        // Health equivalence: ok holds exactly when all three counters are
        // zero, on sanitized and unsanitized children alike.
        let parent = Skill::seed("gen1_ind0", 1, "Compile after every change.");
        for child in [&first, &proposal] {
            let health = compute_mutation_health(child, &parent, &bank, &first_report);
            let counters_zero = health.missing_critical == 0
                && health.remove_violation == 0
                && health.contradiction == 0;
            assert_eq!(health.ok, counters_zero, "case {case}: ok mismatch");
        }
    }

    // Constructed positive and negative health cases.
    let parent = Skill::seed(
        "gen1_ind0",
        1,
        "Compile after every change.\nWrite the complete content to vmodel/top.v.",
    );
    let healthy = parent.clone();
    let health = compute_mutation_health(&healthy, &parent, &bank, &SanitizerReport::default());
    assert!(health.ok);
    let dropped_critical = Skill::seed("child_gen2_1", 2, "Compile after every change.");
    let health =
        compute_mutation_health(&dropped_critical, &parent, &bank, &SanitizerReport::default());
    assert_eq!(health.missing_critical, 1);
    assert!(!health.ok);
    let reintroduces = Skill::seed(
        "child_gen2_2",
        2,
        "Write the complete content to vmodel/top.v.\n\
         write scratch copies under temp directories when iterating",
    );
    let health =
        compute_mutation_health(&reintroduces, &parent, &bank, &SanitizerReport::default());
    assert!(health.remove_violation >= 1);
    assert!(!health.ok);
    let contradicts = Skill::seed(
        "child_gen2_3",
        2,
        "Write the complete content to vmodel/top.v.\nNever compile after every change.",
    );
    let health =
        compute_mutation_health(&contradicts, &parent, &bank, &SanitizerReport::default());
    assert!(health.contradiction >= 1);
    assert!(!health.ok);

    println!(
        "[PASS] criterion 6: sanitize is a fixed point on 1000 fuzzed bodies, leaks nothing, \
         and MutationHealth.ok tracks the violation counters exactly"
    );
}

/// Rule mutator that deliberately drops critical directives for one
/// (generation, slot), forcing a mutation-health failure.
struct FaultInjectingMutator {
    inner: RuleMutator,
    fail_after_generation: u32,
    fail_slot: u32,
}

impl Mutator for FaultInjectingMutator {
    fn propose(
        &self,
        survivor: &Skill,
        handoff: Option<&evoskill_core::domain::MutationHandoff>,
        bank: &LessonBank,
        contract: &ExecutionContract,
        slot: u32,
    ) -> Result<String, ServiceError> {
        if handoff.map(|h| h.generation) == Some(self.fail_after_generation)
            && slot == self.fail_slot
            && !bank.critical_directives.is_empty()
        {
            // Drops every critical directive.
            return Ok("Focus only on iteration speed.".to_string());
        }
        self.inner.propose(survivor, handoff, bank, contract, slot)
    }
}

#[test]
fn criterion_7_generation_update_invariants() {
    let start = Instant::now();
    let (mut services, task) = single_task_services(ScriptedStyle::SkillGuided);
    services.mutator = Box::new(FaultInjectingMutator {
        inner: RuleMutator,
        fail_after_generation: 3,
        fail_slot: 3,
    });
    let config = RunConfig {
        seed: 7,
        ..RunConfig::default()
    };
    let out = tempfile::tempdir().unwrap();
    let histories = run_experiment(
        std::slice::from_ref(&task),
        &[DEFAULT_SEED_SKILL.to_string()],
        &config,
        &services,
        out.path(),
        "C4",
    )
    .unwrap();
    let history = &histories[0];
    assert!(history.error.is_none(), "{:?}", history.error);
    let records = &history.generations;
    assert_eq!(records.len(), 5);

    // Population size is exactly K in every generation.
    for record in records {
        assert_eq!(record.population.len(), 4);
        assert_eq!(record.evaluations.len(), 4);
    }

    // The survivor of generation g sits at slot 0 of generation g+1.
    for window in records.windows(2) {
        let survivor = window[0]
            .population
            .iter()
            .find(|s| s.skill_id == window[0].survivor_id)
            .unwrap();
        let carried = &window[1].population[0];
        assert_eq!(carried.slot, 0);
        assert_eq!(carried.parent_id.as_deref(), Some(survivor.skill_id.as_str()));
        assert_eq!(carried.body, survivor.body);
        assert_eq!(carried.origin, SkillOrigin::CarriedParent);
        // Every other member of g+1 descends from that survivor.
        for child in &window[1].population[1..] {
            assert_eq!(child.parent_id.as_deref(), Some(survivor.skill_id.as_str()));
        }
    }

    // The injected unhealthy child (built after generation 3, slot 3) was
    // replaced by a parent copy, and the health log shows the rejection.
    let replaced = &records[3].population[3];
    assert_eq!(replaced.origin, SkillOrigin::CarriedParent);
    assert_eq!(replaced.skill_id, "gen4_ind3");
    let store = evoskill_core::telemetry::RunStore::create(&history.run_root).unwrap();
    let health_lines: Vec<evoskill_core::telemetry::HealthLine> = store
        .read_lines(Some(4), evoskill_core::telemetry::ArtifactFamily::MutationHealth)
        .unwrap();
    let rejected: Vec<_> = health_lines.iter().filter(|l| !l.health.ok).collect();
    assert_eq!(rejected.len(), 1);
    assert_eq!(rejected[0].health.child_slot, 3);
    assert!(rejected[0].health.missing_critical > 0);

    // Exactly tasks x G x K x R rollouts.
    let total: usize = records.iter().flat_map(|r| r.rollouts.iter()).map(Vec::len).sum();
    assert_eq!(total, 80);

    // Survivor SelectQ is non-decreasing across generations.
    let survivor_qs: Vec<f64> = records
        .iter()
        .map(|r| r.survivor_evaluation().unwrap().select_q)
        .collect();
    for window in survivor_qs.windows(2) {
        assert!(
            window[1] >= window[0] - 1e-12,
            "survivor SelectQ decreased: {survivor_qs:?}"
        );
    }

    // Lineage over every skill ever materialized forms a seed-rooted forest.
    let mut all_skills: Vec<Skill> = Vec::new();
    for record in records {
        all_skills.extend(record.population.iter().cloned());
    }
    evoskill_core::domain::validate_lineage(&all_skills).unwrap();

    // Determinism: the same experiment reproduces identical records.
    let (mut services2, task2) = single_task_services(ScriptedStyle::SkillGuided);
    services2.mutator = Box::new(FaultInjectingMutator {
        inner: RuleMutator,
        fail_after_generation: 3,
        fail_slot: 3,
    });
    let out2 = tempfile::tempdir().unwrap();
    let histories2 = run_experiment(
        &[task2],
        &[DEFAULT_SEED_SKILL.to_string()],
        &config,
        &services2,
        out2.path(),
        "C4",
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&records).unwrap(),
        serde_json::to_string(&histories2[0].generations).unwrap(),
        "records differ across identical runs"
    );

    assert!(start.elapsed().as_secs() < 120);
    println!(
        "[PASS] criterion 7: K=4 everywhere, survivor carried to slot 0, unhealthy child \
         replaced by a parent copy, exactly 80 rollouts, survivor SelectQ non-decreasing"
    );
}

#[test]
fn criterion_8_dense_evolution_unlocks_a_seeded_failure() {
    let start = Instant::now();

    // C1: seed skill, no evolution, no dense feedback.
    let (services, task) = single_task_services(ScriptedStyle::SkillGuided);
    let c1_config = RunConfig {
        ea_enabled: false,
        dense_feedback_enabled: false,
        ..RunConfig::default()
    };
    let out = tempfile::tempdir().unwrap();
    let c1 = run_experiment(
        std::slice::from_ref(&task),
        &[DEFAULT_SEED_SKILL.to_string()],
        &c1_config,
        &services,
        out.path(),
        "C1",
    )
    .unwrap();
    let c1_pass = c1[0].generations[0].evaluations[0].pass_rate;
    assert_eq!(c1_pass, 0.0, "the seed skill must fail this scenario");

    // C4: evolution plus dense feedback, rule-based oracle and mutator.
    let (services, task) = single_task_services(ScriptedStyle::SkillGuided);
    let c4_config = RunConfig::default();
    let out = tempfile::tempdir().unwrap();
    let c4 = run_experiment(
        &[task],
        &[DEFAULT_SEED_SKILL.to_string()],
        &c4_config,
        &services,
        out.path(),
        "C4",
    )
    .unwrap();
    let history = &c4[0];
    assert!(history.error.is_none());
    let final_record = history.generations.last().unwrap();
    let survivor_pass = final_record.survivor_evaluation().unwrap().pass_rate;
    assert!(
        survivor_pass >= 0.75,
        "final-generation survivor pass rate {survivor_pass} below 0.75"
    );
    // The unlock came from an oracle lesson the mutator spliced in: the
    // final survivor names the target path the seed never mentioned.
    let survivor_skill = history.final_survivor.as_ref().unwrap();
    assert!(survivor_skill.body.contains("vmodel/top.v"));
    assert!(!DEFAULT_SEED_SKILL.contains("vmodel/top.v"));
    // Dense feedback was exercised along the way.
    let feedback_calls: u32 = history
        .generations
        .iter()
        .flat_map(|r| r.rollouts.iter().flatten())
        .map(|r| r.feedback_calls_used)
        .sum();
    assert!(feedback_calls > 0);

    assert!(start.elapsed().as_secs() < 300);
    println!(
        "[PASS] criterion 8: C1 stays at 0.0 while C4 reaches survivor pass rate \
         {survivor_pass:.2} via an oracle-extracted lesson"
    );
}

#[test]
fn criterion_9_calibration_matches_brute_force_oracles() {
    fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (sp, lp) in scores.iter().zip(labels) {
            if !lp {
                continue;
            }
            for (sn, ln) in scores.iter().zip(labels) {
                if *ln {
                    continue;
                }
                pairs += 1.0;
                wins += if sp > sn {
                    1.0
                } else if sp == sn {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / pairs
    }
    fn pearson(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len() as f64;
        let xs: Vec<f64> = labels.iter().map(|l| if *l { 1.0 } else { 0.0 }).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = scores.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (x, y) in xs.iter().zip(scores) {
            cov += (x - mx) * (y - my);
            vx += (x - mx) * (x - mx);
            vy += (y - my) * (y - my);
        }
        cov / (vx.sqrt() * vy.sqrt())
    }

    let mut rng = XorShift::new(0xca11_b4a7e);
    for case in 0..200 {
        let n = 4 + rng.below(47);
        let quantized = rng.flip();
        let mut scores: Vec<f64> = (0..n)
            .map(|_| {
                if quantized {
                    (rng.below(6) as f64) / 5.0
                } else {
                    rng.next_f64()
                }
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.flip()).collect();
        // Force both classes.
        labels[0] = true;
        labels[1] = false;
        scores[0] = scores[0].max(1e-6);

        let rank = auc(&scores, &labels).unwrap();
        let brute = auc_pairwise(&scores, &labels);
        let distinct = {
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.windows(2).all(|w| w[0] != w[1])
        };
        if distinct {
            assert_eq!(rank, brute, "case {case}: tie-free AUC must match exactly");
        } else {
            assert!((rank - brute).abs() < 1e-12, "case {case}: AUC diverged under ties");
        }

        match point_biserial(&scores, &labels) {
            Ok(r) => {
                let oracle = pearson(&scores, &labels);
                assert!((r - oracle).abs() < 1e-12, "case {case}: r {r} vs oracle {oracle}");
            }
            // Zero score variance is a declared degenerate input.
            Err(_) => assert!(scores.windows(2).all(|w| w[0] == w[1]) || quantized),
        }
    }
    println!(
        "[PASS] criterion 9: rank AUC equals pairwise AUC on 200 instances (exact without \
         ties) and point-biserial matches the direct formula within 1e-12"
    );
}

#[test]
fn criterion_10_replay_reports_zero_diffs_and_reproduces_survivors() {
    // Re-create the runs of criteria 7 and 8 (deterministic, so identical)
    // and replay each from disk.
    let mut run_roots = Vec::new();

    let (mut services, task) = single_task_services(ScriptedStyle::SkillGuided);
    services.mutator = Box::new(FaultInjectingMutator {
        inner: RuleMutator,
        fail_after_generation: 3,
        fail_slot: 3,
    });
    let out_a = tempfile::tempdir().unwrap();
    let histories = run_experiment(
        &[task],
        &[DEFAULT_SEED_SKILL.to_string()],
        &RunConfig::default(),
        &services,
        out_a.path(),
        "C4",
    )
    .unwrap();
    run_roots.push(histories[0].run_root.clone());

    let (services, task) = single_task_services(ScriptedStyle::SkillGuided);
    let out_b = tempfile::tempdir().unwrap();
    let histories = run_experiment(
        &[task],
        &[DEFAULT_SEED_SKILL.to_string()],
        &RunConfig {
            ea_enabled: false,
            dense_feedback_enabled: false,
            ..RunConfig::default()
        },
        &services,
        out_b.path(),
        "C1",
    )
    .unwrap();
    run_roots.push(histories[0].run_root.clone());

    let (services, task) = single_task_services(ScriptedStyle::SkillGuided);
    let out_c = tempfile::tempdir().unwrap();
    let histories = run_experiment(
        &[task],
        &[DEFAULT_SEED_SKILL.to_string()],
        &RunConfig::default(),
        &services,
        out_c.path(),
        "C4",
    )
    .unwrap();
    run_roots.push(histories[0].run_root.clone());

    for root in &run_roots {
        let report = replay_metrics(root).unwrap();
        assert!(
            report.is_clean(),
            "replay of {} reported diffs: {:?}",
            root.display(),
            report.diffs
        );
        assert!(!report.generations.is_empty());
        for generation in &report.generations {
            assert_eq!(
                generation.recomputed_survivor, generation.stored_survivor,
                "survivor not reproduced in {}",
                root.display()
            );
        }
    }

    // A tampered artifact is caught as exactly one diff.
    let tampered_root = &run_roots[2];
    let fitness_path = tampered_root.join("gen1/combined_selection_fitness.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fitness_path).unwrap()).unwrap();
    let select_q = doc["candidates"][3]["SelectQ"].as_f64().unwrap();
    doc["candidates"][3]["SelectQ"] = serde_json::json!(select_q - 0.01);
    std::fs::write(&fitness_path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let report = replay_metrics(tampered_root).unwrap();
    assert_eq!(report.diffs.len(), 1, "tampering must surface exactly one diff");
    assert_eq!(report.diffs[0].field, "SelectQ");

    println!(
        "[PASS] criterion 10: replay reports zero diffs on all runs, reproduces every stored \
         survivor, and pinpoints a tampered SelectQ"
    );
}
