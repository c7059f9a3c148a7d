//! Rollout execution: the tool registry, the agent turn loop, and final
//! hidden verification. One rollout owns one workspace; the final verifier
//! runs exactly once, after the last agent turn, and is never an agent tool.

pub mod agents;
pub mod env;
pub mod simulator;

use serde_json::Value;
use thiserror::Error;

pub use agents::{
    AgentCall, AgentEndpoint, AgentFactory, AgentPolicy, HttpAgentFactory, ScriptedAgentFactory,
    ScriptedStyle, TurnContext,
};
pub use env::{EnvironmentProvider, RawVerifierBundle, TaskEnvironment, ToolReport, Workspace};
pub use simulator::{Scenario, ScenarioLibrary, SimulatedEnvironment};

use crate::domain::{
    derive_phase, ExecutionContract, Phase, RolloutRecord, RunConfig, Skill, Task, ToolEvent,
    ToolKind, VerifierOutcome,
};
use crate::feedback::{FeedbackGateway, FeedbackSession};
use crate::text::extract_path_tokens;

/// Every tool name the harness can dispatch.
pub const TOOL_UNIVERSE: &[&str] = &[
    "list_dir",
    "read_file",
    "write_file",
    "edit_file",
    "search_text",
    "compile",
    "simulate",
    "show_changes",
    "verify_feedback",
    "finish",
];

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("workspace error: {0}")]
    Workspace(String),
    #[error(transparent)]
    Env(#[from] env::EnvError),
}

/// Tool dispatch table for one run configuration.
#[derive(Debug, Clone)]
pub struct ToolRegistry {
    allowed: Vec<String>,
}

impl ToolRegistry {
    /// `verify_feedback` is registered iff dense feedback is enabled.
    pub fn for_run(dense_feedback_enabled: bool) -> Self {
        let allowed = TOOL_UNIVERSE
            .iter()
            .filter(|name| dense_feedback_enabled || **name != "verify_feedback")
            .map(|name| name.to_string())
            .collect();
        Self { allowed }
    }

    pub fn allowed_tools(&self) -> &[String] {
        &self.allowed
    }

    pub fn contains(&self, name: &str) -> bool {
        self.allowed.iter().any(|t| t == name)
    }

    /// Kind classification; unknown names map to `Other`.
    pub fn kind_of(name: &str) -> ToolKind {
        match name {
            "list_dir" | "read_file" | "search_text" | "show_changes" => ToolKind::Inspect,
            "write_file" | "edit_file" => ToolKind::Edit,
            "compile" => ToolKind::Compile,
            "simulate" => ToolKind::Simulate,
            "verify_feedback" => ToolKind::Feedback,
            _ => ToolKind::Other,
        }
    }
}

/// Builds the run's visibility contract from the workspace, prompt-declared
/// paths, and the environment's hidden identifiers.
pub fn build_contract(
    task: &Task,
    env: &dyn TaskEnvironment,
    config: &RunConfig,
) -> ExecutionContract {
    let registry = ToolRegistry::for_run(config.dense_feedback_enabled);
    let mut visible_paths: Vec<String> =
        task.workspace_spec.iter().map(|f| f.path.clone()).collect();
    for path in extract_path_tokens(&task.prompt) {
        if !visible_paths.contains(&path) {
            visible_paths.push(path);
        }
    }
    ExecutionContract {
        allowed_tools: registry.allowed_tools().to_vec(),
        visible_paths,
        hidden_identifiers: env.hidden_identifiers(),
    }
}

fn truncate(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        return text.to_string();
    }
    let mut end = limit;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &text[..end])
}

fn arg_str<'a>(args: &'a Value, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}

struct ToolOutcome {
    summary: String,
    succeeded: bool,
    files_written: Vec<String>,
}

fn fail(summary: impl Into<String>) -> ToolOutcome {
    ToolOutcome {
        summary: summary.into(),
        succeeded: false,
        files_written: Vec::new(),
    }
}

fn ok(summary: impl Into<String>) -> ToolOutcome {
    ToolOutcome {
        summary: summary.into(),
        succeeded: true,
        files_written: Vec::new(),
    }
}

/// Executes one agent rollout: alternates agent turns with tool execution
/// until the agent finishes or the turn cap is reached, then runs the final
/// hidden verifier exactly once. Agent failures produce a truncated record
/// with `infra_failure` set, never an error.
pub fn run_rollout(
    task: &Task,
    skill: &Skill,
    repeat_index: u32,
    agents: &dyn AgentFactory,
    env: &dyn TaskEnvironment,
    config: &RunConfig,
    contract: &ExecutionContract,
) -> Result<RolloutRecord, RolloutError> {
    let registry = ToolRegistry::for_run(config.dense_feedback_enabled);
    let gateway = FeedbackGateway::new(
        config.dense_feedback_enabled,
        config.feedback_budget,
        contract.clone(),
    );
    let mut session = FeedbackSession::default();
    let mut workspace = env.initial_workspace();
    let mut events: Vec<ToolEvent> = Vec::new();
    let mut infra_failure = false;

    let mut agent = match agents.create(task, skill) {
        Ok(agent) => Some(agent),
        Err(_) => {
            infra_failure = true;
            None
        }
    };

    if let Some(agent) = agent.as_mut() {
        'turns: for turn in 1..=config.turn_cap {
            let call = {
                let ctx = TurnContext {
                    turn,
                    task,
                    skill_body: &skill.body,
                    events: &events,
                    available_tools: registry.allowed_tools(),
                };
                match agent.next_call(&ctx) {
                    Ok(call) => call,
                    Err(_) => {
                        infra_failure = true;
                        break 'turns;
                    }
                }
            };
            let outcome = execute_tool(
                &call,
                &registry,
                env,
                &mut workspace,
                &gateway,
                &mut session,
            );
            if outcome.succeeded && matches!(ToolRegistry::kind_of(&call.tool), ToolKind::Edit) {
                session.has_visible_edit = true;
            }
            if call.tool == "compile" && outcome.succeeded {
                session.has_successful_compile = true;
            }
            events.push(ToolEvent {
                turn,
                tool_name: call.tool.clone(),
                arguments: call.args.clone(),
                result_summary: truncate(&outcome.summary, 400),
                files_written: outcome.files_written,
                kind: if registry.contains(&call.tool) {
                    ToolRegistry::kind_of(&call.tool)
                } else {
                    ToolKind::Other
                },
                succeeded: outcome.succeeded,
            });
            if call.tool == "finish" && outcome.succeeded {
                break;
            }
        }
    }

    // Exactly one final verification, after the last agent turn. A rollout
    // that died on transport gets no verifier credit.
    let final_outcome = if infra_failure {
        VerifierOutcome {
            passed: false,
            tests_total: None,
            tests_failed: None,
            phase: Phase::P0,
            exit_code: -1,
            sanitized_tail: "fail:infra agent transport failure".to_string(),
        }
    } else {
        let bundle = env.verify(&workspace);
        crate::feedback::finalize_outcome(&bundle, contract)
    };

    let phase_reached = derive_phase(&events);
    Ok(RolloutRecord {
        task_id: task.task_id.clone(),
        skill_id: skill.skill_id.clone(),
        repeat_index,
        feedback_calls_used: session.calls_used,
        events,
        final_outcome,
        phase_reached,
        progress: None,
        infra_failure,
    })
}

fn execute_tool(
    call: &AgentCall,
    registry: &ToolRegistry,
    env: &dyn TaskEnvironment,
    workspace: &mut Workspace,
    gateway: &FeedbackGateway,
    session: &mut FeedbackSession,
) -> ToolOutcome {
    if !registry.contains(&call.tool) {
        return fail(format!("tool {} is not available in this run", call.tool));
    }
    match call.tool.as_str() {
        "list_dir" => {
            let paths = workspace.paths();
            ok(format!("{} files: {}", paths.len(), paths.join(", ")))
        }
        "read_file" => match arg_str(&call.args, "path") {
            None => fail("read_file requires a path argument"),
            Some(path) => match workspace.read(path) {
                None => fail(format!("no such file {path}")),
                Some(content) => ok(truncate(content, 400)),
            },
        },
        "write_file" => {
            let (Some(path), Some(content)) =
                (arg_str(&call.args, "path"), arg_str(&call.args, "content"))
            else {
                return fail("write_file requires path and content arguments");
            };
            workspace.write(path, content);
            ToolOutcome {
                summary: format!("wrote {} bytes to {path}", content.len()),
                succeeded: true,
                files_written: vec![path.to_string()],
            }
        }
        "edit_file" => {
            let (Some(path), Some(from), Some(to)) = (
                arg_str(&call.args, "path"),
                arg_str(&call.args, "from"),
                arg_str(&call.args, "to"),
            ) else {
                return fail("edit_file requires path, from, and to arguments");
            };
            match workspace.edit(path, from, to) {
                Ok(()) => ToolOutcome {
                    summary: format!("edited {path}"),
                    succeeded: true,
                    files_written: vec![path.to_string()],
                },
                Err(e) => fail(e.to_string()),
            }
        }
        "search_text" => match arg_str(&call.args, "pattern") {
            None => fail("search_text requires a pattern argument"),
            Some(pattern) => {
                let hits = workspace.search(pattern);
                let rendered: Vec<String> =
                    hits.iter().map(|(path, count)| format!("{path}:{count}")).collect();
                ok(format!("{} files match: {}", hits.len(), rendered.join(", ")))
            }
        },
        "compile" => {
            let report = env.compile(workspace);
            ToolOutcome {
                summary: report.summary,
                succeeded: report.success,
                files_written: Vec::new(),
            }
        }
        "simulate" => {
            let report = env.simulate(workspace);
            ToolOutcome {
                summary: report.summary,
                succeeded: report.success,
                files_written: Vec::new(),
            }
        }
        "show_changes" => {
            let initial = env.initial_workspace();
            let changed: Vec<String> = workspace
                .paths()
                .into_iter()
                .filter(|path| initial.read(path) != workspace.read(path))
                .collect();
            ok(format!("{} files changed: {}", changed.len(), changed.join(", ")))
        }
        "verify_feedback" => {
            let reason = arg_str(&call.args, "reason").unwrap_or("");
            match gateway.request_feedback(session, reason, env, workspace) {
                Ok(observation) => ok(serde_json::to_string(&observation)
                    .unwrap_or_else(|_| "feedback observation".to_string())),
                Err(refusal) => fail(format!("refused: {refusal}")),
            }
        }
        "finish" => ok("finished"),
        other => fail(format!("tool {other} is not available in this run")),
    }
}
