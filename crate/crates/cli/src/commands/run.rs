//! `run`: execute every manifest entry and print a condition summary table
//! (rollouts, pass rate, tasks solved, mean AgentProgressQ).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

use anyhow::{Context, Result};

use evoskill_core::domain::RunConfig;
use evoskill_core::evolution::{
    run_experiment, GenerationRecord, LlmMutator, LlmOracle, LoopServices, DEFAULT_SEED_SKILL,
};
use evoskill_core::metrics::{RuleSkillEstimator, TraceProgressEstimator};
use evoskill_core::rollout::simulator::Scenario;
use evoskill_core::rollout::{
    AgentEndpoint, HttpAgentFactory, ScenarioLibrary, ScriptedStyle,
};
use evoskill_core::services::ChatClient;
use evoskill_core::telemetry::replay::replay_metrics;

use crate::manifest::{Condition, EndpointSpec, ExperimentManifest, ManifestEntry};

pub struct RunOptions {
    pub manifest: PathBuf,
    pub condition: Option<Condition>,
    pub simulator: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub parallel: usize,
    pub replay: bool,
}

#[derive(Default)]
struct ConditionTotals {
    rollouts: u64,
    passes: u64,
    tasks: u64,
    tasks_solved: u64,
    agent_q_sum: f64,
    agent_q_count: u64,
    failures: Vec<String>,
}

struct EntryResult {
    condition: Condition,
    config: RunConfig,
    task_id: String,
    run_root: PathBuf,
    generations: Vec<GenerationRecord>,
    error: Option<String>,
}

fn chat_client(spec: &EndpointSpec, default_env: &str) -> ChatClient {
    let env = spec.api_key_env.clone().unwrap_or_else(|| default_env.to_string());
    ChatClient::new(spec.base_url.clone()).with_api_key_env(env)
}

fn build_services(
    manifest: &ExperimentManifest,
    entry: &ManifestEntry,
    library: ScenarioLibrary,
    config: &RunConfig,
    simulator: bool,
) -> LoopServices {
    let style = entry.agent_style.unwrap_or(ScriptedStyle::SkillGuided);
    match (&manifest.endpoints, simulator) {
        (Some(endpoints), false) => LoopServices {
            environments: Box::new(library.clone()),
            agents: Box::new(HttpAgentFactory::new(
                chat_client(&endpoints.agent, "EVOSKILL_AGENT_API_KEY"),
                AgentEndpoint {
                    base_url: endpoints.agent.base_url.clone(),
                    model: endpoints.agent.model.clone(),
                    temperature: config.rollout_temperature,
                    schema_version: 1,
                },
            )),
            oracle: Box::new(LlmOracle::new(
                chat_client(&endpoints.oracle, "EVOSKILL_ORACLE_API_KEY"),
                endpoints.oracle.model.clone(),
                config.oracle_temperature,
            )),
            mutator: Box::new(LlmMutator::new(
                chat_client(&endpoints.mutator, "EVOSKILL_MUTATOR_API_KEY"),
                endpoints.mutator.model.clone(),
                config.mutator_temperature,
            )),
            skill_estimator: Box::new(RuleSkillEstimator::default()),
            progress_estimator: Box::new(TraceProgressEstimator),
        },
        _ => LoopServices::deterministic(library, style),
    }
}

fn run_entry(
    manifest: &ExperimentManifest,
    entry: &ManifestEntry,
    options: &RunOptions,
    out_root: &std::path::Path,
) -> Result<EntryResult> {
    let scenario = Scenario::from_file(&entry.scenario)
        .with_context(|| format!("loading scenario {}", entry.scenario.display()))?;
    let task = scenario.to_task();
    let mut library = ScenarioLibrary::new();
    library.insert(scenario);

    let mut config = manifest.entry_config(entry);
    if let Some(seed) = options.seed {
        config.seed = seed;
    }
    let seed_body = match &entry.seed_skill {
        None => DEFAULT_SEED_SKILL.to_string(),
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading seed skill {}", path.display()))?,
    };
    let services = build_services(manifest, entry, library, &config, options.simulator);
    let task_id = task.task_id.clone();
    let histories = run_experiment(
        &[task],
        &[seed_body],
        &config,
        &services,
        out_root,
        entry.condition.label(),
    )?;
    let history = histories.into_iter().next().expect("one task yields one history");
    Ok(EntryResult {
        condition: entry.condition,
        config,
        task_id,
        run_root: history.run_root,
        generations: history.generations,
        error: history.error,
    })
}

pub fn cmd_run(options: &RunOptions) -> Result<i32> {
    let manifest = ExperimentManifest::load(&options.manifest)
        .map_err(|e| crate::config_problem(format!("{e:#}")))?;
    let out_root = options.out.clone().unwrap_or_else(|| manifest.output_root.clone());
    std::fs::create_dir_all(&out_root)
        .with_context(|| format!("creating output root {}", out_root.display()))?;

    let entries: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| options.condition.map(|c| e.condition == c).unwrap_or(true))
        .collect();
    if entries.is_empty() {
        return Err(crate::config_problem("no manifest entries match the requested condition"));
    }

    // Task runs fan out up to the configured parallelism.
    let queue: Mutex<Vec<(usize, &ManifestEntry)>> =
        Mutex::new(entries.iter().copied().enumerate().rev().collect());
    let results: Mutex<Vec<(usize, Result<EntryResult>)>> = Mutex::new(Vec::new());
    let workers = options.parallel.max(1).min(entries.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").pop();
                let Some((index, entry)) = next else { break };
                let result = run_entry(&manifest, entry, options, &out_root);
                results.lock().expect("results lock").push((index, result));
            });
        }
    });
    let mut results = results.into_inner().expect("results");
    results.sort_by_key(|(index, _)| *index);

    let mut totals: BTreeMap<&'static str, ConditionTotals> = BTreeMap::new();
    let mut any_failure = false;
    let mut run_roots = Vec::new();
    for (_, result) in results {
        match result {
            Err(error) => {
                any_failure = true;
                eprintln!("run failed: {error:#}");
            }
            Ok(entry_result) => {
                let totals = totals.entry(entry_result.condition.label()).or_default();
                totals.tasks += 1;
                if let Some(error) = &entry_result.error {
                    any_failure = true;
                    totals.failures.push(format!("{}: {error}", entry_result.task_id));
                    continue;
                }
                run_roots.push(entry_result.run_root.clone());
                let mut passes = 0u64;
                let mut rollouts = 0u64;
                for record in &entry_result.generations {
                    for slot in &record.rollouts {
                        for rollout in slot {
                            rollouts += 1;
                            if rollout.final_outcome.passed {
                                passes += 1;
                            }
                        }
                    }
                    for evaluation in &record.evaluations {
                        if !evaluation.invalid {
                            totals.agent_q_sum += evaluation.progress.progress_q;
                            totals.agent_q_count += 1;
                        }
                    }
                }
                totals.rollouts += rollouts;
                totals.passes += passes;
                if passes > 0 {
                    totals.tasks_solved += 1;
                }
                let expected = expected_rollouts(&entry_result.config);
                if rollouts != expected {
                    any_failure = true;
                    eprintln!(
                        "{}: expected {expected} rollouts, observed {rollouts}",
                        entry_result.task_id
                    );
                }
            }
        }
    }

    println!(
        "{:<5} {:<4} {:<6} {:>9} {:>10} {:>9} {:>8}",
        "Cfg", "EA", "Dense", "Rollouts", "Pass Rate", "Solved", "AgentQ"
    );
    for (condition, totals) in &totals {
        let (ea, dense) = condition.parse::<Condition>().expect("known label").flags();
        let pass_rate = if totals.rollouts == 0 {
            0.0
        } else {
            totals.passes as f64 / totals.rollouts as f64
        };
        let agent_q = if totals.agent_q_count == 0 {
            0.0
        } else {
            totals.agent_q_sum / totals.agent_q_count as f64
        };
        println!(
            "{:<5} {:<4} {:<6} {:>9} {:>9.1}% {:>6}/{:<2} {:>8.3}",
            condition,
            if ea { "Yes" } else { "No" },
            if dense { "Yes" } else { "No" },
            totals.rollouts,
            pass_rate * 100.0,
            totals.tasks_solved,
            totals.tasks,
            agent_q,
        );
        for failure in &totals.failures {
            eprintln!("  failed task: {failure}");
        }
    }

    if options.replay {
        for root in &run_roots {
            let report = replay_metrics(root)?;
            if !report.is_clean() {
                any_failure = true;
                eprintln!("replay of {} reported {} diffs", root.display(), report.diffs.len());
            }
        }
        println!("replay checked {} runs", run_roots.len());
    }

    Ok(if any_failure { 1 } else { 0 })
}

fn expected_rollouts(config: &RunConfig) -> u64 {
    if config.ea_enabled {
        config.generations as u64 * config.population_size as u64 * config.repeats as u64
    } else {
        config.repeats as u64
    }
}
