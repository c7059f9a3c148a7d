//! Rollout protocol service: `GET /global_config_dict_yaml` describes the
//! server, and `POST /run` executes a batch of (task, skill, repeats)
//! entries and returns per-rollout rewards with trace references.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::domain::{RunConfig, Skill};
use crate::evolution::LoopServices;
use crate::rollout::build_contract;
use crate::rollout::{run_rollout, ScenarioLibrary};

/// Server configuration surfaced through the config endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServerConfig {
    pub bind_addr: String,
    pub model: String,
    pub rollout_temperature: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind_addr: "127.0.0.1:8098".to_string(),
            model: "scripted".to_string(),
            rollout_temperature: 0.2,
            out_dir: None,
        }
    }
}

pub struct ServerState {
    pub library: ScenarioLibrary,
    pub services: LoopServices,
    pub run_config: RunConfig,
    pub server_config: ServerConfig,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RunEntry {
    pub task_id: String,
    /// Skill body injected into the agent; the bundled seed when omitted.
    pub skill_body: Option<String>,
    pub repeats: u32,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RunRequest {
    pub entries: Vec<RunEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutResult {
    pub task_id: String,
    pub repeat: u32,
    pub reward: f64,
    pub outcome: String,
    pub phase: String,
    pub num_tool_calls: u32,
    pub trace_ref: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResponse {
    pub results: Vec<RolloutResult>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug, Serialize)]
struct ErrorDetail {
    code: String,
    message: String,
}

fn reject(status: StatusCode, code: &str, message: String) -> (StatusCode, Json<ErrorBody>) {
    (
        status,
        Json(ErrorBody {
            error: ErrorDetail {
                code: code.to_string(),
                message,
            },
        }),
    )
}

async fn global_config(State(state): State<Arc<ServerState>>) -> impl IntoResponse {
    let doc = serde_yaml::to_string(&serde_json::json!({
        "head_server": format!("http://{}", state.server_config.bind_addr),
        "resources_server": format!("http://{}", state.server_config.bind_addr),
        "agent": {
            "model": state.server_config.model,
            "temperature": state.server_config.rollout_temperature,
            "schema_version": 1,
        },
        "run": {
            "turn_cap": state.run_config.turn_cap,
            "feedback_budget": state.run_config.feedback_budget,
            "dense_feedback_enabled": state.run_config.dense_feedback_enabled,
        },
        "tasks": state.library.tasks().iter().map(|t| t.task_id.clone()).collect::<Vec<_>>(),
    }))
    .unwrap_or_else(|_| "{}".to_string());
    ([("content-type", "text/yaml")], doc)
}

async fn run_batch(
    State(state): State<Arc<ServerState>>,
    Json(request): Json<RunRequest>,
) -> Result<Json<RunResponse>, (StatusCode, Json<ErrorBody>)> {
    if request.entries.is_empty() {
        return Err(reject(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_batch",
            "run request carries no entries".to_string(),
        ));
    }
    for entry in &request.entries {
        if state.library.get(&entry.task_id).is_none()
            && !state.library.tasks().iter().any(|t| t.task_id == entry.task_id)
        {
            return Err(reject(
                StatusCode::NOT_FOUND,
                "unknown_task",
                format!("task {} is not registered", entry.task_id),
            ));
        }
        if entry.repeats == 0 {
            return Err(reject(
                StatusCode::UNPROCESSABLE_ENTITY,
                "zero_repeats",
                format!("task {} requests zero repeats", entry.task_id),
            ));
        }
    }

    let state_clone = Arc::clone(&state);
    let entries = request.entries.clone();
    // The engine is synchronous; keep it off the async workers.
    let results = tokio::task::spawn_blocking(move || execute_batch(&state_clone, &entries))
        .await
        .map_err(|e| {
            reject(StatusCode::INTERNAL_SERVER_ERROR, "batch_panic", e.to_string())
        })??;
    Ok(Json(RunResponse { results }))
}

fn execute_batch(
    state: &ServerState,
    entries: &[RunEntry],
) -> Result<Vec<RolloutResult>, (StatusCode, Json<ErrorBody>)> {
    let mut results = Vec::new();
    // Entries fan out in parallel; each rollout keeps its own workspace.
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (batch_index, entry) in entries.iter().enumerate() {
            let state = &*state;
            handles.push(scope.spawn(move || -> Vec<RolloutResult> {
                let Some(task) =
                    state.library.tasks().into_iter().find(|t| t.task_id == entry.task_id)
                else {
                    return Vec::new();
                };
                let body = entry
                    .skill_body
                    .clone()
                    .unwrap_or_else(|| crate::evolution::DEFAULT_SEED_SKILL.to_string());
                let skill = Skill::seed("server_skill", 1, body);
                let Ok(env) = state.services.environments.create(&task) else {
                    return Vec::new();
                };
                let contract = build_contract(&task, env.as_ref(), &state.run_config);
                let mut out = Vec::new();
                for repeat in 0..entry.repeats {
                    let record = run_rollout(
                        &task,
                        &skill,
                        repeat,
                        state.services.agents.as_ref(),
                        env.as_ref(),
                        &state.run_config,
                        &contract,
                    );
                    let Ok(record) = record else { continue };
                    let trace_ref = format!("batch_{batch_index}/{}_r{repeat}.json", task.task_id);
                    if let Some(dir) = &state.server_config.out_dir {
                        let path = dir.join(&trace_ref);
                        if let Some(parent) = path.parent() {
                            let _ = std::fs::create_dir_all(parent);
                        }
                        if let Ok(json) = serde_json::to_string_pretty(&record) {
                            let _ = std::fs::write(&path, json);
                        }
                    }
                    out.push(RolloutResult {
                        task_id: task.task_id.clone(),
                        repeat,
                        reward: record.final_outcome.reward(),
                        outcome: if record.final_outcome.passed { "pass" } else { "fail" }
                            .to_string(),
                        phase: record.phase_reached.to_string(),
                        num_tool_calls: record.events.len() as u32,
                        trace_ref,
                    });
                }
                out
            }));
        }
        for handle in handles {
            if let Ok(mut batch) = handle.join() {
                results.append(&mut batch);
            }
        }
    });
    Ok(results)
}

/// Builds the protocol router over shared state.
pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/global_config_dict_yaml", get(global_config))
        .route("/run", post(run_batch))
        .with_state(state)
}

/// Serves the rollout protocol until the process exits.
pub async fn serve(state: Arc<ServerState>) -> Result<(), std::io::Error> {
    let addr = state.server_config.bind_addr.clone();
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    axum::serve(listener, router(state)).await
}
