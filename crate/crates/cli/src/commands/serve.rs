//! `serve`: host the rollout protocol over a scenario directory.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};

use evoskill_core::domain::RunConfig;
use evoskill_core::evolution::LoopServices;
use evoskill_core::rollout::{ScenarioLibrary, ScriptedStyle};
use evoskill_core::server::{serve, ServerConfig, ServerState};

pub struct ServeOptions {
    pub scenarios: PathBuf,
    pub addr: String,
    pub out: Option<PathBuf>,
}

pub fn cmd_serve(options: &ServeOptions) -> Result<i32> {
    let library = ScenarioLibrary::load_dir(&options.scenarios)
        .with_context(|| format!("loading scenarios from {}", options.scenarios.display()))?;
    let tasks = library.tasks();
    if tasks.is_empty() {
        anyhow::bail!("no scenario documents found in {}", options.scenarios.display());
    }
    println!("serving {} tasks on http://{}", tasks.len(), options.addr);
    for task in &tasks {
        println!("  {}", task.task_id);
    }
    let services = LoopServices::deterministic(library.clone(), ScriptedStyle::SkillGuided);
    let state = Arc::new(ServerState {
        library,
        services,
        run_config: RunConfig::default(),
        server_config: ServerConfig {
            bind_addr: options.addr.clone(),
            out_dir: options.out.clone(),
            ..ServerConfig::default()
        },
    });
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(serve(state))?;
    Ok(0)
}
