//! Repair-or-reject post-processing for mutated skill proposals.
//!
//! Four repair passes run in a fixed order so reports are deterministic:
//! hidden-artifact leakage, unavailable-tool advice, ungrounded path
//! guidance, then contradictions against the lesson bank. Rejection is
//! expressed through `invalid_reasons`, never through errors.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{
    ExecutionContract, LessonBank, LessonTag, Skill, SkillOrigin, Validity,
};
use crate::rollout::TOOL_UNIVERSE;
use crate::text::{
    body_lines, coverage_fraction, extract_path_tokens, is_negated, jaccard_similarity, scrub_all,
    token_set, DirectiveMatcher, KeywordMatcher,
};

/// Repair-action tags, mirrored into telemetry.
pub const REPAIR_HARNESS_REWRITE: &str = "rewrote_harness_execution_to_visible_metadata";
pub const REPAIR_PATH_REWRITE: &str = "rewrote_unconfirmed_path_guidance";
pub const REPAIR_TOOL_REMOVAL: &str = "removed_unavailable_tool_advice";
pub const REPAIR_CONTRADICTION_REMOVAL: &str = "removed_contradicting_directive";
pub const REPAIR_REMOVAL_REINTRODUCTION: &str = "removed_reintroduced_removal";

const HIDDEN_REPLACEMENT: &str = "the visible verifier metadata";
const PATH_REPLACEMENT: &str = "a confirmed workspace file";

/// A span deleted or rewritten during sanitization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedSpan {
    pub reason: String,
    pub excerpt_hash: String,
}

/// What the sanitizer did to one proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SanitizerReport {
    pub repairs: Vec<String>,
    pub invalid_reasons: Vec<String>,
    pub removed_spans: Vec<RemovedSpan>,
}

impl SanitizerReport {
    pub fn is_valid(&self) -> bool {
        self.invalid_reasons.is_empty()
    }
}

/// Mutation-health record gating a repaired child's entry into the
/// next population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationHealth {
    pub child_slot: u32,
    pub parent_id: String,
    pub ok: bool,
    /// Token-set Jaccard between child and parent bodies.
    pub similarity: f64,
    /// Fraction of current-generation oracle directives matched in the child.
    pub coverage: f64,
    /// Same measure evaluated on the parent.
    pub parent_coverage: f64,
    /// Current-generation directives the parent misses.
    pub parent_missing: u32,
    pub missing_critical: u32,
    pub remove_violation: u32,
    pub contradiction: u32,
    pub repair_attempted: bool,
}

fn excerpt_hash(excerpt: &str) -> String {
    let digest = Sha256::digest(excerpt.as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    hex
}

/// Applies the ordered repair passes to a proposal, returning the repaired
/// skill and a report. Remaining violations mark the skill invalid instead
/// of raising errors.
pub fn sanitize(
    proposal: &Skill,
    contract: &ExecutionContract,
    bank: &LessonBank,
) -> (Skill, SanitizerReport) {
    let matcher = KeywordMatcher;
    let mut report = SanitizerReport::default();
    let mut body = proposal.body.clone();

    if body.trim().is_empty() {
        report.invalid_reasons.push("empty_body".to_string());
        let mut repaired = proposal.clone();
        repaired.validity = Validity::Invalid;
        repaired.invalid_reasons = report.invalid_reasons.clone();
        return (repaired, report);
    }

    // Pass 1: strip references to hidden artifacts, rewriting execution
    // advice about them into visible-metadata advice.
    for hidden in &contract.hidden_identifiers {
        if hidden.is_empty() {
            continue;
        }
        if body.to_lowercase().contains(&hidden.to_lowercase()) {
            body = scrub_all(&body, hidden, HIDDEN_REPLACEMENT);
            push_unique(&mut report.repairs, REPAIR_HARNESS_REWRITE);
            report.removed_spans.push(RemovedSpan {
                reason: REPAIR_HARNESS_REWRITE.to_string(),
                excerpt_hash: excerpt_hash(hidden),
            });
        }
    }

    // Pass 2: drop advice lines naming tools outside the allowed set. When
    // nothing usable remains afterwards the proposal is irreparable.
    let mut removed_for_tools = false;
    body = retain_lines(&body, |line| {
        let words = token_set(line);
        let offending = TOOL_UNIVERSE
            .iter()
            .find(|tool| words.contains(**tool) && !contract.allows_tool(tool));
        if let Some(tool) = offending {
            push_unique(&mut report.repairs, REPAIR_TOOL_REMOVAL);
            report.removed_spans.push(RemovedSpan {
                reason: format!("{REPAIR_TOOL_REMOVAL}:{tool}"),
                excerpt_hash: excerpt_hash(line),
            });
            removed_for_tools = true;
            false
        } else {
            true
        }
    });

    // Pass 3: rewrite path guidance naming files outside the visible
    // workspace.
    for path in extract_path_tokens(&body) {
        if !contract.visible_paths.iter().any(|p| p == &path) {
            body = scrub_all(&body, &path, PATH_REPLACEMENT);
            push_unique(&mut report.repairs, REPAIR_PATH_REWRITE);
            report.removed_spans.push(RemovedSpan {
                reason: REPAIR_PATH_REWRITE.to_string(),
                excerpt_hash: excerpt_hash(&path),
            });
        }
    }

    // Pass 4: delete directives contradicting a KEEP lesson or repeating a
    // REMOVE lesson.
    let keeps = bank.lessons_with_tag(LessonTag::Keep);
    let removes = bank.lessons_with_tag(LessonTag::Remove);
    let mut removed_for_contradiction = false;
    let mut removed_for_reintroduction = false;
    body = retain_lines(&body, |line| {
        let negated = is_negated(line);
        if negated && keeps.iter().any(|l| matcher.matches(&l.text, line)) {
            push_unique(&mut report.repairs, REPAIR_CONTRADICTION_REMOVAL);
            report.removed_spans.push(RemovedSpan {
                reason: REPAIR_CONTRADICTION_REMOVAL.to_string(),
                excerpt_hash: excerpt_hash(line),
            });
            removed_for_contradiction = true;
            return false;
        }
        if !negated && removes.iter().any(|l| matcher.matches(&l.text, line)) {
            push_unique(&mut report.repairs, REPAIR_REMOVAL_REINTRODUCTION);
            report.removed_spans.push(RemovedSpan {
                reason: REPAIR_REMOVAL_REINTRODUCTION.to_string(),
                excerpt_hash: excerpt_hash(line),
            });
            removed_for_reintroduction = true;
            return false;
        }
        true
    });

    // Final scan: whatever the passes could not repair marks the proposal
    // invalid.
    if body.trim().is_empty() {
        if removed_for_tools {
            report.invalid_reasons.push("unavailable_tool".to_string());
        }
        if removed_for_contradiction {
            report.invalid_reasons.push("contradiction".to_string());
        }
        if removed_for_reintroduction {
            report.invalid_reasons.push("remove_violation".to_string());
        }
        if report.invalid_reasons.is_empty() {
            report.invalid_reasons.push("empty_after_repair".to_string());
        }
    }
    for hidden in &contract.hidden_identifiers {
        if !hidden.is_empty() && body.to_lowercase().contains(&hidden.to_lowercase()) {
            report.invalid_reasons.push("hidden_reference".to_string());
            break;
        }
    }

    let mut repaired = proposal.clone();
    repaired.body = body;
    // Directive metadata follows the body: scrub leaked text, drop entries
    // whose directive no longer appears.
    repaired.directives = proposal
        .directives
        .iter()
        .map(|d| {
            let mut text = d.text.clone();
            for hidden in &contract.hidden_identifiers {
                text = scrub_all(&text, hidden, HIDDEN_REPLACEMENT);
            }
            crate::domain::Directive { tag: d.tag, text }
        })
        .filter(|d| matcher.matches(&d.text, &repaired.body))
        .collect();
    if report.invalid_reasons.is_empty() {
        repaired.validity = Validity::Valid;
        repaired.invalid_reasons.clear();
        if !report.repairs.is_empty() && repaired.origin == SkillOrigin::MutatedChild {
            repaired.origin = SkillOrigin::RepairedChild;
        }
    } else {
        repaired.validity = Validity::Invalid;
        repaired.invalid_reasons = report.invalid_reasons.clone();
    }
    (repaired, report)
}

fn push_unique(tags: &mut Vec<String>, tag: &str) {
    if !tags.iter().any(|t| t == tag) {
        tags.push(tag.to_string());
    }
}

fn retain_lines<F: FnMut(&str) -> bool>(body: &str, mut keep: F) -> String {
    let kept: Vec<&str> = body
        .lines()
        .filter(|line| {
            let trimmed = line.trim();
            trimmed.is_empty() || keep(trimmed)
        })
        .collect();
    let mut out = kept.join("\n");
    if body.ends_with('\n') && !out.is_empty() {
        out.push('\n');
    }
    out
}

/// M_keep: fraction of critical bank directives retained in the child body.
/// Vacuously 1.0 when the bank flags no critical directives.
pub fn compute_retention_gate(child: &Skill, bank: &LessonBank) -> f64 {
    let matcher = KeywordMatcher;
    let criticals: Vec<&str> = bank.critical_lessons().iter().map(|l| l.text.as_str()).collect();
    coverage_fraction(&matcher, &criticals, &child.body)
}

/// Scores a sanitized child against its parent and the lesson bank.
///
/// `ok` holds exactly when all three violation counters are zero; coverage
/// and similarity are diagnostics only.
pub fn compute_mutation_health(
    child: &Skill,
    parent: &Skill,
    bank: &LessonBank,
    report: &SanitizerReport,
) -> MutationHealth {
    let matcher = KeywordMatcher;

    let current_generation = bank.entries.iter().map(|l| l.source_generation).max();
    let current: Vec<&str> = bank
        .entries
        .iter()
        .filter(|l| Some(l.source_generation) == current_generation)
        .filter(|l| matches!(l.tag, LessonTag::Keep | LessonTag::Add))
        .map(|l| l.text.as_str())
        .collect();
    let coverage = coverage_fraction(&matcher, &current, &child.body);
    let parent_coverage = coverage_fraction(&matcher, &current, &parent.body);
    let parent_missing = current
        .iter()
        .filter(|text| !matcher.matches(text, &parent.body))
        .count() as u32;

    let missing_critical = bank
        .critical_lessons()
        .iter()
        .filter(|l| !matcher.matches(&l.text, &child.body))
        .count() as u32;

    let mut remove_violation = 0u32;
    let mut contradiction = 0u32;
    let keeps = bank.lessons_with_tag(LessonTag::Keep);
    let removes = bank.lessons_with_tag(LessonTag::Remove);
    for line in body_lines(&child.body) {
        let negated = is_negated(line);
        if negated && keeps.iter().any(|l| matcher.matches(&l.text, line)) {
            contradiction += 1;
        }
        if !negated && removes.iter().any(|l| matcher.matches(&l.text, line)) {
            remove_violation += 1;
        }
    }

    MutationHealth {
        child_slot: child.slot,
        parent_id: parent.skill_id.clone(),
        ok: missing_critical == 0 && remove_violation == 0 && contradiction == 0,
        similarity: jaccard_similarity(&child.body, &parent.body),
        coverage,
        parent_coverage,
        parent_missing,
        missing_critical,
        remove_violation,
        contradiction,
        repair_attempted: !report.repairs.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Lesson;

    fn contract() -> ExecutionContract {
        ExecutionContract {
            allowed_tools: vec![
                "list_dir".into(),
                "read_file".into(),
                "write_file".into(),
                "compile".into(),
                "simulate".into(),
                "finish".into(),
            ],
            visible_paths: vec!["vmodel/top.v".into(), "readme.md".into()],
            hidden_identifiers: vec!["harness/hidden_tb.v".into(), "ref_solution.v".into()],
        }
    }

    fn bank_with(entries: Vec<(LessonTag, &str, bool)>) -> LessonBank {
        let mut bank = LessonBank::default();
        for (idx, (tag, text, critical)) in entries.into_iter().enumerate() {
            let id = format!("lesson_{idx}");
            bank.entries.push(Lesson {
                lesson_id: id.clone(),
                tag,
                text: text.to_string(),
                source_generation: 1,
                from_invalid_candidate: false,
            });
            if critical {
                bank.critical_directives.push(id);
            }
        }
        bank
    }

    fn proposal(body: &str) -> Skill {
        let mut skill = Skill::seed("child_gen2_1", 2, body);
        skill.origin = SkillOrigin::MutatedChild;
        skill.parent_id = Some("gen1_ind0".to_string());
        skill.slot = 1;
        skill
    }

    #[test]
    fn hidden_harness_reference_is_rewritten() {
        let body = "Run harness/hidden_tb.v to inspect the tests.\nCompile after edits.";
        let (repaired, report) = sanitize(&proposal(body), &contract(), &LessonBank::default());
        assert!(report.repairs.iter().any(|r| r == REPAIR_HARNESS_REWRITE));
        assert!(!repaired.body.to_lowercase().contains("hidden_tb.v"));
        assert!(report.is_valid());
    }

    #[test]
    fn identical_parent_proposal_is_a_fixed_point() {
        let body = "Read the files first.\nCompile after edits.\nWrite vmodel/top.v.";
        let (repaired, report) = sanitize(&proposal(body), &contract(), &LessonBank::default());
        assert_eq!(repaired.body, body);
        assert!(report.repairs.is_empty());
        assert!(report.is_valid());
        assert_eq!(repaired.origin, SkillOrigin::MutatedChild);
    }

    #[test]
    fn irreparable_unavailable_tool_advice_is_invalid() {
        // The whole proposal is advice about a tool the contract withholds.
        let body = "Call verify_feedback after every single edit.";
        let (repaired, report) = sanitize(&proposal(body), &contract(), &LessonBank::default());
        assert_eq!(report.invalid_reasons, vec!["unavailable_tool".to_string()]);
        assert_eq!(repaired.validity, Validity::Invalid);
    }

    #[test]
    fn unconfirmed_path_guidance_is_rewritten() {
        let body = "Edit ghost/missing.v first.\nThen compile.";
        let (repaired, report) = sanitize(&proposal(body), &contract(), &LessonBank::default());
        assert!(report.repairs.iter().any(|r| r == REPAIR_PATH_REWRITE));
        assert!(!repaired.body.contains("ghost/missing.v"));
        assert!(repaired.body.contains("a confirmed workspace file"));
        assert_eq!(repaired.origin, SkillOrigin::RepairedChild);
    }

    #[test]
    fn keep_contradiction_and_remove_repetition_are_deleted() {
        let bank = bank_with(vec![
            (LessonTag::Keep, "compile after every edit", false),
            (LessonTag::Remove, "write same-basename shadow paths", false),
        ]);
        let body = "Do not compile after every edit.\n\
                    Write same-basename shadow paths when stuck.\n\
                    Read the files first.";
        let (repaired, report) = sanitize(&proposal(body), &contract(), &bank);
        assert!(report.repairs.iter().any(|r| r == REPAIR_CONTRADICTION_REMOVAL));
        assert!(report.repairs.iter().any(|r| r == REPAIR_REMOVAL_REINTRODUCTION));
        assert_eq!(repaired.body.trim(), "Read the files first.");
        assert!(report.is_valid());
    }

    #[test]
    fn sanitize_is_idempotent_on_repaired_output() {
        let bank = bank_with(vec![(LessonTag::Keep, "compile after every edit", true)]);
        let body = "Run harness/hidden_tb.v now.\nDo not compile after every edit.\n\
                    Edit ghost/missing.v.\nRead readme.md first.";
        let (first, first_report) = sanitize(&proposal(body), &contract(), &bank);
        let (second, second_report) = sanitize(&first, &contract(), &bank);
        assert_eq!(second.body, first.body);
        assert!(second_report.repairs.is_empty());
        assert_eq!(second_report.is_valid(), first_report.is_valid());
    }

    #[test]
    fn retention_gate_counts_critical_matches() {
        let bank = bank_with(vec![
            (LessonTag::Add, "write the full content to vmodel/top.v", true),
            (LessonTag::Add, "compile asserts exactly once", true),
            (LessonTag::Add, "use tight compile loops", true),
            (LessonTag::Add, "read submodules before wiring", true),
        ]);
        let child = proposal(
            "Write the full content to vmodel/top.v.\n\
             Compile asserts exactly once.\n\
             Use tight compile loops.",
        );
        let gate = compute_retention_gate(&child, &bank);
        assert!((gate - 0.75).abs() < 1e-12);

        assert_eq!(compute_retention_gate(&child, &LessonBank::default()), 1.0);
        let empty_child = proposal("Something unrelated entirely.");
        assert_eq!(compute_retention_gate(&empty_child, &bank), 0.0);
    }

    #[test]
    fn health_identity_child_mirrors_parent() {
        let bank = bank_with(vec![(LessonTag::Add, "compile after edits", false)]);
        let parent = proposal("Read files.\nCompile after edits.");
        let mut child = parent.clone();
        child.skill_id = "child_gen2_2".to_string();
        let health = compute_mutation_health(&child, &parent, &bank, &SanitizerReport::default());
        assert_eq!(health.similarity, 1.0);
        assert_eq!(health.coverage, health.parent_coverage);
        assert!(health.ok);
    }

    #[test]
    fn health_flags_contradiction_as_not_ok() {
        let bank = bank_with(vec![
            (LessonTag::Keep, "compile after every edit", false),
            (LessonTag::Keep, "read files before editing", false),
        ]);
        let parent = proposal("Compile after every edit.\nRead files before editing.");
        let child = proposal("Never compile after every edit.\nRead files before editing.");
        let health = compute_mutation_health(&child, &parent, &bank, &SanitizerReport::default());
        assert!(health.contradiction >= 1);
        assert!(!health.ok);
    }

    #[test]
    fn health_full_integration_beats_parent_coverage() {
        let bank = bank_with(vec![
            (LessonTag::Add, "ground edits on confirmed paths", false),
            (LessonTag::Add, "coordinate top and submodule fixes", false),
        ]);
        let parent = proposal("Generic guidance only.");
        let child = proposal(
            "Ground edits on confirmed paths.\nCoordinate top and submodule fixes.",
        );
        let health = compute_mutation_health(&child, &parent, &bank, &SanitizerReport::default());
        assert_eq!(health.coverage, 1.0);
        assert_eq!(health.parent_coverage, 0.0);
        assert_eq!(health.parent_missing, 2);
        assert!(health.ok);
    }
}
