//! Runtime dense-feedback policy and verifier-output sanitization.
//!
//! `verify_feedback` runs the hidden verifier on a private copy of the
//! workspace and returns only bounded functional observations: final mode,
//! failure phase, partial test counts, and a templated next-focus hint.
//! Policy refusals are tool-level results the agent can adapt to; a refused
//! call consumes no budget.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::domain::{ExecutionContract, Phase, VerifierOutcome};
use crate::rollout::env::{RawVerifierBundle, TaskEnvironment, Workspace};
use crate::text::scrub_all;

/// Why a feedback request was refused.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum FeedbackPolicyError {
    #[error("verify_feedback is disabled for this run")]
    FeatureDisabled,
    #[error("feedback budget exhausted for this rollout")]
    BudgetExhausted,
    #[error("verify_feedback requires a visible code edit first")]
    NoEditYet,
    #[error("verify_feedback requires a successful visible compile first")]
    NoSuccessfulCompile,
    #[error("no code change since the previous feedback call")]
    NoChangeSinceLastCall,
}

/// Final mode of a sanitized verifier observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalMode {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail:compile")]
    FailCompile,
    #[serde(rename = "fail:simulation_or_assertion")]
    FailSimulationOrAssertion,
    #[serde(rename = "fail:timeout")]
    FailTimeout,
    #[serde(rename = "fail:infra")]
    FailInfra,
}

impl std::fmt::Display for FinalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let label = match self {
            FinalMode::Pass => "pass",
            FinalMode::FailCompile => "fail:compile",
            FinalMode::FailSimulationOrAssertion => "fail:simulation_or_assertion",
            FinalMode::FailTimeout => "fail:timeout",
            FinalMode::FailInfra => "fail:infra",
        };
        f.write_str(label)
    }
}

/// The bounded observation returned to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackObservation {
    pub final_mode: FinalMode,
    pub phase: Phase,
    pub tests_total: Option<u32>,
    pub tests_failed: Option<u32>,
    pub next_focus_hint: String,
    pub exit_code: i32,
}

/// Per-rollout feedback state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FeedbackSession {
    pub calls_used: u32,
    pub last_feedback_workspace_hash: Option<String>,
    pub has_visible_edit: bool,
    pub has_successful_compile: bool,
}

/// Enforces the feedback policy for one run configuration.
#[derive(Debug, Clone)]
pub struct FeedbackGateway {
    enabled: bool,
    budget: u32,
    contract: ExecutionContract,
}

impl FeedbackGateway {
    pub fn new(enabled: bool, budget: u32, contract: ExecutionContract) -> Self {
        Self {
            enabled,
            budget,
            contract,
        }
    }

    /// Runs the verifier on a private copy of the workspace and returns a
    /// sanitized observation, enforcing every precondition of the policy.
    /// The observation never counts as final correctness.
    pub fn request_feedback(
        &self,
        session: &mut FeedbackSession,
        _reason: &str,
        env: &dyn TaskEnvironment,
        workspace: &Workspace,
    ) -> Result<FeedbackObservation, FeedbackPolicyError> {
        if !self.enabled {
            return Err(FeedbackPolicyError::FeatureDisabled);
        }
        if session.calls_used >= self.budget {
            return Err(FeedbackPolicyError::BudgetExhausted);
        }
        if !session.has_visible_edit {
            return Err(FeedbackPolicyError::NoEditYet);
        }
        if !session.has_successful_compile {
            return Err(FeedbackPolicyError::NoSuccessfulCompile);
        }
        let digest = workspace.digest();
        if session.last_feedback_workspace_hash.as_deref() == Some(digest.as_str()) {
            return Err(FeedbackPolicyError::NoChangeSinceLastCall);
        }
        // Verifier sees a private copy; the live workspace stays untouched.
        let private_copy = workspace.clone();
        let bundle = env.verify(&private_copy);
        let observation = sanitize_verifier_output(&bundle, &self.contract);
        session.calls_used += 1;
        session.last_feedback_workspace_hash = Some(digest);
        Ok(observation)
    }
}

fn tally_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"TESTS=(\d+)\s+PASS=(\d+)\s+FAIL=(\d+)").unwrap())
}

fn failed_of_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[Ff]ailed (\d+) of (\d+) tests").unwrap())
}

fn exception_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\w+(Error|Exit|Exception): .{0,120}$").unwrap())
}

fn parse_counts(log: &str) -> Option<(u32, u32)> {
    if let Some(caps) = tally_regex().captures(log) {
        let total: u32 = caps[1].parse().ok()?;
        let failed: u32 = caps[3].parse().ok()?;
        return Some((total, failed));
    }
    if let Some(caps) = failed_of_regex().captures(log) {
        let failed: u32 = caps[1].parse().ok()?;
        let total: u32 = caps[2].parse().ok()?;
        return Some((total, failed));
    }
    None
}

fn classify(bundle: &RawVerifierBundle, counts: Option<(u32, u32)>) -> FinalMode {
    let log = bundle.log.to_uppercase();
    if log.contains("COMPILE_ERROR") || log.contains("COMPILATION FAILED") {
        return FinalMode::FailCompile;
    }
    if log.contains("TIMEOUT") {
        return FinalMode::FailTimeout;
    }
    match counts {
        Some((_, failed)) if failed > 0 => FinalMode::FailSimulationOrAssertion,
        Some((_, 0)) if bundle.exit_code == 0 => FinalMode::Pass,
        Some(_) => FinalMode::FailSimulationOrAssertion,
        // No recognizable evidence at all: over-redaction is preferred.
        None => FinalMode::FailInfra,
    }
}

fn phase_for(mode: FinalMode) -> Phase {
    match mode {
        FinalMode::Pass | FinalMode::FailSimulationOrAssertion => Phase::P4,
        FinalMode::FailTimeout => Phase::P3,
        FinalMode::FailCompile => Phase::P2,
        FinalMode::FailInfra => Phase::P0,
    }
}

fn hint_for(mode: FinalMode, counts: Option<(u32, u32)>) -> String {
    match (mode, counts) {
        (FinalMode::Pass, Some((total, _))) => {
            format!("All {total} hidden tests pass; finalize your changes.")
        }
        (FinalMode::Pass, None) => "Hidden verification passes; finalize your changes.".to_string(),
        (FinalMode::FailCompile, _) => {
            "Fix compilation against the visible sources before re-running.".to_string()
        }
        (FinalMode::FailSimulationOrAssertion, Some((total, failed))) => {
            format!("Address functional mismatches; {failed} of {total} hidden tests fail.")
        }
        (FinalMode::FailSimulationOrAssertion, None) => {
            "Address functional mismatches; at least one hidden test fails.".to_string()
        }
        (FinalMode::FailTimeout, _) => {
            "Verification timed out; check for stalls or unbounded loops.".to_string()
        }
        (FinalMode::FailInfra, _) => {
            "Verification infrastructure error; continue editing and retry.".to_string()
        }
    }
}

/// Keeps only whitelisted summary lines (final tallies and single-line
/// exception summaries) and scrubs hidden identifiers, absolute paths, and
/// container configuration from them.
fn sanitized_tail(log: &str, contract: &ExecutionContract) -> String {
    let mut kept = Vec::new();
    for line in log.lines() {
        let trimmed = line.trim();
        let whitelisted = tally_regex().is_match(trimmed)
            || failed_of_regex().is_match(trimmed)
            || exception_regex().is_match(trimmed);
        if !whitelisted {
            continue;
        }
        if trimmed.split_whitespace().any(|tok| tok.starts_with('/')) {
            continue;
        }
        let lowered = trimmed.to_lowercase();
        if lowered.contains("docker") || lowered.contains("compose") {
            continue;
        }
        if contract
            .hidden_identifiers
            .iter()
            .any(|h| !h.is_empty() && lowered.contains(&h.to_lowercase()))
        {
            continue;
        }
        kept.push(trimmed.to_string());
    }
    let mut tail = kept.join("\n");
    // Belt and braces: scrub again so no filter change can leak a token.
    for hidden in &contract.hidden_identifiers {
        tail = scrub_all(&tail, hidden, "[redacted]");
    }
    tail
}

/// Extracts mode, phase, counts, and a templated hint from a raw verifier
/// bundle. Over-redaction is preferred; an unparseable bundle yields
/// `fail:infra` with no counts.
pub fn sanitize_verifier_output(
    bundle: &RawVerifierBundle,
    contract: &ExecutionContract,
) -> FeedbackObservation {
    let counts = parse_counts(&bundle.log);
    let mode = classify(bundle, counts);
    let (tests_total, tests_failed) = match (mode, counts) {
        (FinalMode::FailInfra, _) => (None, None),
        (_, Some((total, failed))) => (Some(total), Some(failed)),
        _ => (None, None),
    };
    let mut hint = hint_for(mode, counts);
    for hidden in &contract.hidden_identifiers {
        hint = scrub_all(&hint, hidden, "[redacted]");
    }
    FeedbackObservation {
        final_mode: mode,
        phase: phase_for(mode),
        tests_total,
        tests_failed,
        next_focus_hint: hint,
        exit_code: bundle.exit_code,
    }
}

/// Builds the final `VerifierOutcome` for a rollout from a raw bundle,
/// through the same sanitization machinery as runtime feedback.
pub fn finalize_outcome(
    bundle: &RawVerifierBundle,
    contract: &ExecutionContract,
) -> VerifierOutcome {
    let observation = sanitize_verifier_output(bundle, contract);
    let mut tail = sanitized_tail(&bundle.log, contract);
    if tail.is_empty() {
        tail = observation.final_mode.to_string();
    }
    VerifierOutcome {
        passed: observation.final_mode == FinalMode::Pass,
        tests_total: observation.tests_total,
        tests_failed: observation.tests_failed,
        phase: observation.phase,
        exit_code: bundle.exit_code,
        sanitized_tail: tail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::simulator::{path_grounding_scenario, SimulatedEnvironment};
    use crate::rollout::env::TaskEnvironment;

    fn contract() -> ExecutionContract {
        ExecutionContract {
            allowed_tools: vec!["verify_feedback".to_string()],
            visible_paths: vec![],
            hidden_identifiers: vec![
                "harness/hidden_tb.v".to_string(),
                "ref_solution/top_ref.v".to_string(),
            ],
        }
    }

    fn ready_session() -> FeedbackSession {
        FeedbackSession {
            calls_used: 0,
            last_feedback_workspace_hash: None,
            has_visible_edit: true,
            has_successful_compile: true,
        }
    }

    fn env_and_passing_workspace() -> (SimulatedEnvironment, Workspace) {
        let scenario = path_grounding_scenario();
        let env = SimulatedEnvironment::new(scenario.clone());
        let mut ws = env.initial_workspace();
        ws.write(&scenario.target_path, &scenario.known_good_content);
        (env, ws)
    }

    #[test]
    fn pass_tally_parses_to_pass_observation() {
        let bundle = RawVerifierBundle {
            exit_code: 0,
            log: "TESTS=5 PASS=5 FAIL=0\n".to_string(),
        };
        let obs = sanitize_verifier_output(&bundle, &contract());
        assert_eq!(obs.final_mode, FinalMode::Pass);
        assert_eq!(obs.tests_total, Some(5));
        assert_eq!(obs.tests_failed, Some(0));
    }

    #[test]
    fn partial_failure_reports_counts_and_phase() {
        let bundle = RawVerifierBundle {
            exit_code: 1,
            log: "running at MAX_LENGTH=192\nSystemExit: ERROR: Failed 3 of 5 tests\n".to_string(),
        };
        let obs = sanitize_verifier_output(&bundle, &contract());
        assert_eq!(obs.final_mode, FinalMode::FailSimulationOrAssertion);
        assert_eq!(obs.phase, Phase::P4);
        assert_eq!(obs.tests_failed, Some(3));
        assert_eq!(obs.tests_total, Some(5));
    }

    #[test]
    fn garbled_bundle_is_infra_with_no_counts() {
        let bundle = RawVerifierBundle {
            exit_code: 3,
            log: "¯\\_(ツ)_/¯".to_string(),
        };
        let obs = sanitize_verifier_output(&bundle, &contract());
        assert_eq!(obs.final_mode, FinalMode::FailInfra);
        assert_eq!(obs.tests_total, None);
        assert_eq!(obs.tests_failed, None);
    }

    #[test]
    fn hidden_names_never_reach_the_observation() {
        let bundle = RawVerifierBundle {
            exit_code: 1,
            log: "loading harness/hidden_tb.v\nTESTS=5 PASS=2 FAIL=3\n\
                  diff against ref_solution/top_ref.v line 14\n"
                .to_string(),
        };
        let contract = contract();
        let obs = sanitize_verifier_output(&bundle, &contract);
        let serialized = serde_json::to_string(&obs).unwrap().to_lowercase();
        for hidden in &contract.hidden_identifiers {
            assert!(!serialized.contains(&hidden.to_lowercase()));
        }
        let outcome = finalize_outcome(&bundle, &contract);
        for hidden in &contract.hidden_identifiers {
            assert!(!outcome.sanitized_tail.to_lowercase().contains(&hidden.to_lowercase()));
        }
        assert!(outcome.sanitized_tail.contains("TESTS=5 PASS=2 FAIL=3"));
    }

    #[test]
    fn budget_refuses_the_fourth_call() {
        let (env, ws) = env_and_passing_workspace();
        let gateway = FeedbackGateway::new(true, 3, contract());
        let mut session = ready_session();
        for i in 0..3 {
            // Change the workspace between calls so the no-change rule
            // does not fire first.
            let mut ws = ws.clone();
            ws.write("scratch.txt", &format!("attempt {i}"));
            gateway.request_feedback(&mut session, "check", &env, &ws).unwrap();
        }
        assert_eq!(session.calls_used, 3);
        let mut ws = ws.clone();
        ws.write("scratch.txt", "attempt 3");
        let err = gateway.request_feedback(&mut session, "check", &env, &ws).unwrap_err();
        assert_eq!(err, FeedbackPolicyError::BudgetExhausted);
        assert_eq!(session.calls_used, 3);
    }

    #[test]
    fn preconditions_refuse_in_order() {
        let (env, ws) = env_and_passing_workspace();
        let gateway = FeedbackGateway::new(true, 3, contract());

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
        // Refusals consumed no budget.
        assert_eq!(session.calls_used, 1);

        let disabled = FeedbackGateway::new(false, 3, contract());
        let mut session = ready_session();
        assert_eq!(
            disabled.request_feedback(&mut session, "r", &env, &ws).unwrap_err(),
            FeedbackPolicyError::FeatureDisabled
        );
    }

    #[test]
    fn feedback_does_not_change_the_live_workspace() {
        let (env, ws) = env_and_passing_workspace();
        let gateway = FeedbackGateway::new(true, 3, contract());
        let mut session = ready_session();
        let before = ws.digest();
        gateway.request_feedback(&mut session, "check", &env, &ws).unwrap();
        assert_eq!(ws.digest(), before);
    }

    #[test]
    fn final_verification_is_independent_of_feedback_calls() {
        // The same final workspace verifies identically whether zero or
        // three feedback calls were made along the way.
        let (env, ws) = env_and_passing_workspace();
        let untouched = env.verify(&ws);

        let gateway = FeedbackGateway::new(true, 3, contract());
        let mut session = ready_session();
        for i in 0..3 {
            let mut probe = ws.clone();
            probe.write("scratch.txt", &format!("change {i}"));
            gateway.request_feedback(&mut session, "check", &env, &probe).unwrap();
        }
        assert_eq!(session.calls_used, 3);
        let after_feedback = env.verify(&ws);
        assert_eq!(untouched, after_feedback);
    }
}
