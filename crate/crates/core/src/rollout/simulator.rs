//! Deterministic desk-scale environment simulator.
//!
//! A scenario document declares the visible files, content predicates, the
//! compile gate, and which predicates the hidden verifier checks. Compile,
//! simulate, and verify are then pure functions of workspace content, so
//! whole experiment runs are reproducible byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{FileEntry, Task};
use crate::rollout::env::{
    EnvError, EnvironmentProvider, RawVerifierBundle, TaskEnvironment, ToolReport, Workspace,
};

/// Where a predicate is checked: locally, by the hidden verifier, or both.
/// `LocalOnly` models misleading self-authored tests that pass simulation
/// but carry no weight with the hidden verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateScope {
    Both,
    LocalOnly,
    HiddenOnly,
}

/// One content predicate: `file` must contain `must_contain`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPredicate {
    pub id: String,
    pub path: String,
    pub must_contain: String,
    pub scope: PredicateScope,
}

impl ScenarioPredicate {
    fn holds(&self, workspace: &Workspace) -> bool {
        workspace.read(&self.path).is_some_and(|content| content.contains(&self.must_contain))
    }
}

/// A deterministic verifier-capable task description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub task_id: String,
    pub category_id: String,
    pub prompt: String,
    pub files: Vec<FileEntry>,
    /// Deliverable the hidden harness builds.
    pub target_path: String,
    /// Same-basename decoy location scripted agents fall back to.
    pub shadow_path: String,
    /// Content that satisfies every predicate when written to the target.
    pub known_good_content: String,
    pub predicates: Vec<ScenarioPredicate>,
    /// Predicate ids that gate compile success.
    pub compile_requires: Vec<String>,
    /// Identifiers the verifier log may leak and the agent must never see.
    pub hidden_identifiers: Vec<String>,
    /// Raw verifier log lines emitted verbatim before the test tally.
    #[serde(default)]
    pub verifier_noise_lines: Vec<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| EnvError::MalformedScenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::MalformedScenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.task_id.is_empty() {
            return Err(EnvError::MalformedScenario("task_id must be non-empty".to_string()));
        }
        if self.predicates.is_empty() {
            return Err(EnvError::MalformedScenario("at least one predicate required".to_string()));
        }
        for id in &self.compile_requires {
            if !self.predicates.iter().any(|p| &p.id == id) {
                return Err(EnvError::MalformedScenario(format!(
                    "compile_requires references unknown predicate {id}"
                )));
            }
        }
        Ok(())
    }

    /// Materializes the task record handed to the orchestrator.
    pub fn to_task(&self) -> Task {
        Task {
            task_id: self.task_id.clone(),
            category_id: self.category_id.clone(),
            prompt: self.prompt.clone(),
            workspace_spec: self.files.clone(),
            environment_handle: self.name.clone(),
        }
    }

    fn hidden_scope_predicates(&self) -> Vec<&ScenarioPredicate> {
        self.predicates
            .iter()
            .filter(|p| matches!(p.scope, PredicateScope::Both | PredicateScope::HiddenOnly))
            .collect()
    }

    fn local_scope_predicates(&self) -> Vec<&ScenarioPredicate> {
        self.predicates
            .iter()
            .filter(|p| matches!(p.scope, PredicateScope::Both | PredicateScope::LocalOnly))
            .collect()
    }

    fn compile_ok(&self, workspace: &Workspace) -> Option<String> {
        for id in &self.compile_requires {
            let predicate = self.predicates.iter().find(|p| &p.id == id).expect("validated");
            if !predicate.holds(workspace) {
                return Some(format!(
                    "error: {}: required construct missing ({})",
                    predicate.path, predicate.id
                ));
            }
        }
        None
    }
}

/// Environment whose tool semantics come from a scenario document.
#[derive(Debug, Clone)]
pub struct SimulatedEnvironment {
    scenario: Scenario,
}

impl SimulatedEnvironment {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl TaskEnvironment for SimulatedEnvironment {
    fn initial_workspace(&self) -> Workspace {
        Workspace::from_entries(&self.scenario.files)
    }

    fn compile(&self, workspace: &Workspace) -> ToolReport {
        match self.scenario.compile_ok(workspace) {
            None => ToolReport {
                success: true,
                summary: "compile ok".to_string(),
            },
            Some(message) => ToolReport {
                success: false,
                summary: message,
            },
        }
    }

    fn simulate(&self, workspace: &Workspace) -> ToolReport {
        if let Some(message) = self.scenario.compile_ok(workspace) {
            return ToolReport {
                success: false,
                summary: format!("simulation blocked: {message}"),
            };
        }
        let predicates = self.scenario.local_scope_predicates();
        let failed = predicates.iter().filter(|p| !p.holds(workspace)).count();
        let total = predicates.len();
        ToolReport {
            success: failed == 0,
            summary: format!("local simulation: {} of {total} checks pass", total - failed),
        }
    }

    fn verify(&self, workspace: &Workspace) -> RawVerifierBundle {
        let mut log = String::new();
        for line in &self.scenario.verifier_noise_lines {
            log.push_str(line);
            log.push('\n');
        }
        if let Some(message) = self.scenario.compile_ok(workspace) {
            log.push_str("COMPILE_ERROR: hidden harness build failed\n");
            log.push_str(&message);
            log.push('\n');
            return RawVerifierBundle { exit_code: 2, log };
        }
        let predicates = self.scenario.hidden_scope_predicates();
        let total = predicates.len();
        let failed = predicates.iter().filter(|p| !p.holds(workspace)).count();
        let passed = total - failed;
        log.push_str(&format!("TESTS={total} PASS={passed} FAIL={failed}\n"));
        if failed > 0 {
            log.push_str(&format!("SystemExit: ERROR: Failed {failed} of {total} tests\n"));
            RawVerifierBundle { exit_code: 1, log }
        } else {
            RawVerifierBundle { exit_code: 0, log }
        }
    }

    fn hidden_identifiers(&self) -> Vec<String> {
        self.scenario.hidden_identifiers.clone()
    }
}

/// A named collection of scenarios acting as the environment provider for
/// simulator runs.
#[derive(Debug, Clone, Default)]
pub struct ScenarioLibrary {
    scenarios: BTreeMap<String, Scenario>,
}

impl ScenarioLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, scenario: Scenario) {
        self.scenarios.insert(scenario.name.clone(), scenario);
    }

    pub fn load_dir(dir: &Path) -> Result<Self, EnvError> {
        let mut library = Self::new();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| EnvError::MalformedScenario(format!("{}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        for path in paths {
            library.insert(Scenario::from_file(&path)?);
        }
        Ok(library)
    }

    pub fn get(&self, name: &str) -> Option<&Scenario> {
        self.scenarios.get(name)
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.scenarios.values().map(Scenario::to_task).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.scenarios.keys().cloned().collect()
    }
}

impl EnvironmentProvider for ScenarioLibrary {
    fn create(&self, task: &Task) -> Result<Box<dyn TaskEnvironment>, EnvError> {
        let scenario = self
            .scenarios
            .get(&task.environment_handle)
            .ok_or_else(|| EnvError::UnknownHandle(task.environment_handle.clone()))?;
        Ok(Box::new(SimulatedEnvironment::new(scenario.clone())))
    }
}

/// The built-in path-grounding scenario: the seed behavior writes a decoy
/// same-basename file and fails, while a skill that names the true target
/// path unlocks full passes.
pub fn path_grounding_scenario() -> Scenario {
    Scenario {
        name: "path_grounding".to_string(),
        task_id: "sim_cpu_top_0001".to_string(),
        category_id: "cid005".to_string(),
        prompt: "Complete the CPU top module. Write the full implementation to vmodel/top.v, \
                 wiring the fetch, decode, and execute stages together. The hidden harness \
                 compiles vmodel/top.v against the provided stage files and runs five \
                 functional tests."
            .to_string(),
        files: vec![
            FileEntry {
                path: "vmodel/fetch.v".to_string(),
                content: "module fetch(input clk, output [7:0] instr);\nendmodule\n".to_string(),
            },
            FileEntry {
                path: "vmodel/decode.v".to_string(),
                content: "module decode(input [7:0] instr, output [3:0] op);\nendmodule\n"
                    .to_string(),
            },
            FileEntry {
                path: "vmodel/execute.v".to_string(),
                content: "module execute(input [3:0] op, output [7:0] result);\nendmodule\n"
                    .to_string(),
            },
            FileEntry {
                path: "README.md".to_string(),
                content: "CPU stages live under vmodel/.\n".to_string(),
            },
        ],
        target_path: "vmodel/top.v".to_string(),
        shadow_path: "top.v".to_string(),
        known_good_content: "module top(input clk, output [7:0] result);\n  wire [7:0] instr;\n  \
                             wire [3:0] op;\n  fetch u_fetch(.clk(clk), .instr(instr));\n  \
                             decode u_decode(.instr(instr), .op(op));\n  \
                             execute u_execute(.op(op), .result(result));\nendmodule\n"
            .to_string(),
        predicates: vec![
            ScenarioPredicate {
                id: "top_module".to_string(),
                path: "vmodel/top.v".to_string(),
                must_contain: "module top".to_string(),
                scope: PredicateScope::Both,
            },
            ScenarioPredicate {
                id: "top_closed".to_string(),
                path: "vmodel/top.v".to_string(),
                must_contain: "endmodule".to_string(),
                scope: PredicateScope::Both,
            },
            ScenarioPredicate {
                id: "fetch_wired".to_string(),
                path: "vmodel/top.v".to_string(),
                must_contain: "fetch".to_string(),
                scope: PredicateScope::HiddenOnly,
            },
            ScenarioPredicate {
                id: "decode_wired".to_string(),
                path: "vmodel/top.v".to_string(),
                must_contain: "decode".to_string(),
                scope: PredicateScope::HiddenOnly,
            },
            ScenarioPredicate {
                id: "execute_wired".to_string(),
                path: "vmodel/top.v".to_string(),
                must_contain: "execute".to_string(),
                scope: PredicateScope::HiddenOnly,
            },
        ],
        compile_requires: vec!["top_module".to_string(), "top_closed".to_string()],
        hidden_identifiers: vec![
            "harness/hidden_tb.v".to_string(),
            "ref_solution/top_ref.v".to_string(),
            "docker-compose.yml".to_string(),
            "hidden_runner.py".to_string(),
        ],
        verifier_noise_lines: vec![
            "loading harness/hidden_tb.v".to_string(),
            "comparing against ref_solution/top_ref.v".to_string(),
        ],
    }
}

/// A scenario the seed behavior already solves; useful for mixed-outcome
/// calibration data and smoke tests.
pub fn ready_pass_scenario() -> Scenario {
    let mut scenario = path_grounding_scenario();
    scenario.name = "ready_pass".to_string();
    scenario.task_id = "sim_cpu_top_0002".to_string();
    scenario.prompt = "Finish the top module already sketched in top.v. Write the complete \
                       implementation to top.v wiring fetch, decode, and execute."
        .to_string();
    scenario.target_path = "top.v".to_string();
    scenario.shadow_path = "top.v".to_string();
    for predicate in &mut scenario.predicates {
        predicate.path = "top.v".to_string();
    }
    scenario
}
