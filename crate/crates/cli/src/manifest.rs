//! Experiment manifests: which tasks to run, under which condition, with
//! which configuration overrides. Conditions imply the EA and dense-feedback
//! flags; explicit overrides that disagree are rejected at load time.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use evoskill_core::domain::RunConfig;
use evoskill_core::rollout::ScriptedStyle;

/// The four ablation conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    C1,
    C2,
    C3,
    C4,
}

impl Condition {
    /// (ea_enabled, dense_feedback_enabled) implied by the condition.
    pub fn flags(self) -> (bool, bool) {
        match self {
            Condition::C1 => (false, false),
            Condition::C2 => (false, true),
            Condition::C3 => (true, false),
            Condition::C4 => (true, true),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::C1 => "C1",
            Condition::C2 => "C2",
            Condition::C3 => "C3",
            Condition::C4 => "C4",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(Condition::C1),
            "C2" => Ok(Condition::C2),
            "C3" => Ok(Condition::C3),
            "C4" => Ok(Condition::C4),
            other => Err(format!("unknown condition {other}; expected C1..C4")),
        }
    }
}

/// Partial run-configuration override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigPatch {
    pub population_size: Option<u32>,
    pub generations: Option<u32>,
    pub repeats: Option<u32>,
    pub task_count: Option<u32>,
    pub turn_cap: Option<u32>,
    pub feedback_budget: Option<u32>,
    pub semantic_floor_tau: Option<f64>,
    pub dense_feedback_enabled: Option<bool>,
    pub ea_enabled: Option<bool>,
    pub rollout_temperature: Option<f64>,
    pub oracle_temperature: Option<f64>,
    pub mutator_temperature: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfigPatch {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            population_size: self.population_size.unwrap_or(base.population_size),
            generations: self.generations.unwrap_or(base.generations),
            repeats: self.repeats.unwrap_or(base.repeats),
            task_count: self.task_count.unwrap_or(base.task_count),
            turn_cap: self.turn_cap.unwrap_or(base.turn_cap),
            feedback_budget: self.feedback_budget.unwrap_or(base.feedback_budget),
            semantic_floor_tau: self.semantic_floor_tau.unwrap_or(base.semantic_floor_tau),
            dense_feedback_enabled: self
                .dense_feedback_enabled
                .unwrap_or(base.dense_feedback_enabled),
            ea_enabled: self.ea_enabled.unwrap_or(base.ea_enabled),
            rollout_temperature: self.rollout_temperature.unwrap_or(base.rollout_temperature),
            oracle_temperature: self.oracle_temperature.unwrap_or(base.oracle_temperature),
            mutator_temperature: self.mutator_temperature.unwrap_or(base.mutator_temperature),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

/// One chat-completion endpoint reference. The credential is named by an
/// environment variable, never stored in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

/// Live-model endpoints for the rollout agent, oracle, and mutator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointsSpec {
    pub agent: EndpointSpec,
    pub oracle: EndpointSpec,
    pub mutator: EndpointSpec,
}

/// One experiment entry: a scenario run under a condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub condition: Condition,
    /// Scenario document defining the task and its simulated verifier.
    pub scenario: PathBuf,
    /// Seed skill body; the bundled default when omitted.
    #[serde(default)]
    pub seed_skill: Option<PathBuf>,
    #[serde(default)]
    pub config: RunConfigPatch,
    /// Scripted behavior for simulator runs.
    #[serde(default)]
    pub agent_style: Option<ScriptedStyle>,
}

/// A full experiment manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub output_root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub endpoints: Option<EndpointsSpec>,
}

impl ExperimentManifest {
    /// Loads and validates a manifest, resolving relative paths against the
    /// manifest file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        let mut manifest: ExperimentManifest =
            serde_yaml::from_str(&text).with_context(|| "parsing manifest".to_string())?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if manifest.output_root.is_relative() {
            manifest.output_root = base.join(&manifest.output_root);
        }
        for entry in &mut manifest.entries {
            if entry.scenario.is_relative() {
                entry.scenario = base.join(&entry.scenario);
            }
            if let Some(seed) = &entry.seed_skill {
                if seed.is_relative() {
                    entry.seed_skill = Some(base.join(seed));
                }
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Validates condition-flag consistency and entry completeness.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            bail!("manifest lists no entries");
        }
        for (index, entry) in self.entries.iter().enumerate() {
            let (ea, dense) = entry.condition.flags();
            if let Some(explicit) = entry.config.ea_enabled {
                if explicit != ea {
                    bail!(
                        "entry {index}: condition {} implies ea_enabled={ea} but the config \
                         override says {explicit}",
                        entry.condition.label()
                    );
                }
            }
            if let Some(explicit) = entry.config.dense_feedback_enabled {
                if explicit != dense {
                    bail!(
                        "entry {index}: condition {} implies dense_feedback_enabled={dense} but \
                         the config override says {explicit}",
                        entry.condition.label()
                    );
                }
            }
            if !entry.scenario.exists() {
                bail!(
                    "entry {index}: scenario {} does not exist",
                    entry.scenario.display()
                );
            }
        }
        Ok(())
    }

    /// The effective run configuration of one entry.
    pub fn entry_config(&self, entry: &ManifestEntry) -> RunConfig {
        let (ea, dense) = entry.condition.flags();
        let base = RunConfig {
            ea_enabled: ea,
            dense_feedback_enabled: dense,
            ..RunConfig::default()
        };
        let mut config = entry.config.apply(&base);
        // The condition always wins; validate() already rejected conflicts.
        config.ea_enabled = ea;
        config.dense_feedback_enabled = dense;
        config
    }
}
