//! Mutator stage: proposes child skill bodies from the survivor, the
//! mutation handoff, and the lesson bank. The rule-based implementation
//! splices unintegrated lessons into the survivor body deterministically;
//! the chat-backed one asks a model and relies on the sanitizer to repair.

use crate::domain::{ExecutionContract, LessonBank, LessonTag, MutationHandoff, Skill};
use crate::services::{ChatClient, ChatMessage, ServiceError};
use crate::text::{DirectiveMatcher, KeywordMatcher};

pub trait Mutator: Send + Sync {
    /// Proposes a child body for `slot` of the next generation.
    fn propose(
        &self,
        survivor: &Skill,
        handoff: Option<&MutationHandoff>,
        bank: &LessonBank,
        contract: &ExecutionContract,
        slot: u32,
    ) -> Result<String, ServiceError>;
}

/// Deterministic mutator: appends a learned-directives section with bank
/// lessons the survivor has not integrated yet. Slot parity varies how
/// aggressive the splice is, so siblings are not always identical.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleMutator;

impl Mutator for RuleMutator {
    fn propose(
        &self,
        survivor: &Skill,
        _handoff: Option<&MutationHandoff>,
        bank: &LessonBank,
        _contract: &ExecutionContract,
        slot: u32,
    ) -> Result<String, ServiceError> {
        let matcher = KeywordMatcher;
        let critical_only = slot.is_multiple_of(2);
        let mut additions: Vec<String> = Vec::new();
        for lesson in &bank.entries {
            let is_critical = bank.critical_directives.contains(&lesson.lesson_id);
            if critical_only && !is_critical {
                continue;
            }
            match lesson.tag {
                LessonTag::Keep | LessonTag::Add => {
                    if !matcher.matches(&lesson.text, &survivor.body) {
                        additions.push(format!("- {}", lesson.text));
                    }
                }
                LessonTag::Remove => {
                    // Integrated as a negated guard so the pattern itself
                    // never re-enters the body verbatim.
                    let guard = format!("- Avoid: {}", lesson.text);
                    let already = survivor
                        .body
                        .lines()
                        .any(|l| crate::text::normalize(l.trim()) == crate::text::normalize(&guard));
                    if !critical_only && !already {
                        additions.push(guard);
                    }
                }
            }
        }
        if additions.is_empty() {
            return Ok(survivor.body.clone());
        }
        let mut body = survivor.body.trim_end().to_string();
        if !body.contains("## Learned directives") {
            body.push_str("\n\n## Learned directives\n");
        } else {
            body.push('\n');
        }
        for addition in additions {
            body.push_str(&addition);
            body.push('\n');
        }
        Ok(body)
    }
}

/// Default mutator system prompt, replaceable at construction.
pub const DEFAULT_MUTATOR_PROMPT: &str = include_str!("../../assets/mutator_system.md");

/// Chat-backed mutator.
pub struct LlmMutator {
    client: ChatClient,
    model: String,
    temperature: f64,
    system_prompt: String,
}

impl LlmMutator {
    pub fn new(client: ChatClient, model: impl Into<String>, temperature: f64) -> Self {
        Self {
            client,
            model: model.into(),
            temperature,
            system_prompt: DEFAULT_MUTATOR_PROMPT.to_string(),
        }
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    fn render_request(
        survivor: &Skill,
        handoff: Option<&MutationHandoff>,
        bank: &LessonBank,
        contract: &ExecutionContract,
        slot: u32,
    ) -> String {
        let mut text = format!(
            "Produce child skill for slot {slot}.\n\n## Survivor skill\n{}\n\n## Lessons\n",
            survivor.body
        );
        for lesson in &bank.entries {
            let critical = if bank.critical_directives.contains(&lesson.lesson_id) {
                " (critical)"
            } else {
                ""
            };
            text.push_str(&format!("- {:?}{}: {}\n", lesson.tag, critical, lesson.text));
        }
        if let Some(handoff) = handoff {
            text.push_str(&format!(
                "\n## Handoff\nsurvivor={} selection {:+.3} pass {:+.3} progress {:+.3}\n",
                handoff.survivor_id,
                handoff.selection_delta,
                handoff.pass_delta,
                handoff.progress_delta
            ));
        }
        text.push_str(&format!(
            "\n## Contract\nallowed tools: {}\nvisible paths: {}\n\nReturn only the complete \
             child skill body.",
            contract.allowed_tools.join(", "),
            contract.visible_paths.join(", ")
        ));
        text
    }

    fn strip_fences(content: &str) -> String {
        let trimmed = content.trim();
        let trimmed = trimmed
            .strip_prefix("```markdown")
            .or_else(|| trimmed.strip_prefix("```md"))
            .or_else(|| trimmed.strip_prefix("```"))
            .unwrap_or(trimmed);
        trimmed.strip_suffix("```").unwrap_or(trimmed).trim().to_string()
    }
}

impl Mutator for LlmMutator {
    fn propose(
        &self,
        survivor: &Skill,
        handoff: Option<&MutationHandoff>,
        bank: &LessonBank,
        contract: &ExecutionContract,
        slot: u32,
    ) -> Result<String, ServiceError> {
        let messages = [
            ChatMessage::system(self.system_prompt.clone()),
            ChatMessage::user(Self::render_request(survivor, handoff, bank, contract, slot)),
        ];
        let content = self.client.complete(&self.model, self.temperature, &messages)?;
        let body = Self::strip_fences(&content);
        if body.is_empty() {
            return Err(ServiceError::Parse("mutator returned an empty body".to_string()));
        }
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Lesson;

    fn bank() -> LessonBank {
        let mut bank = LessonBank::default();
        bank.entries.push(Lesson {
            lesson_id: "lesson_0".to_string(),
            tag: LessonTag::Add,
            text: "Write the complete required content to vmodel/top.v exactly as named in the \
                   task."
                .to_string(),
            source_generation: 1,
            from_invalid_candidate: false,
        });
        bank.critical_directives.push("lesson_0".to_string());
        bank.entries.push(Lesson {
            lesson_id: "lesson_1".to_string(),
            tag: LessonTag::Remove,
            text: "write same-basename shadow copies instead of the declared target file"
                .to_string(),
            source_generation: 1,
            from_invalid_candidate: false,
        });
        bank
    }

    #[test]
    fn rule_mutator_splices_missing_lessons() {
        let survivor = Skill::seed("gen1_ind0", 1, "Read files first.\nCompile after edits.");
        let body = RuleMutator
            .propose(&survivor, None, &bank(), &ExecutionContract::default(), 1)
            .unwrap();
        assert!(body.contains("vmodel/top.v"));
        assert!(body.contains("## Learned directives"));
        assert!(body.contains("Avoid: write same-basename shadow copies"));
    }

    #[test]
    fn rule_mutator_even_slots_take_critical_lessons_only() {
        let survivor = Skill::seed("gen1_ind0", 1, "Read files first.");
        let body = RuleMutator
            .propose(&survivor, None, &bank(), &ExecutionContract::default(), 2)
            .unwrap();
        assert!(body.contains("vmodel/top.v"));
        assert!(!body.contains("Avoid:"));
    }

    #[test]
    fn rule_mutator_is_identity_without_new_lessons() {
        let survivor = Skill::seed("gen1_ind0", 1, "Read files first.");
        let body = RuleMutator
            .propose(&survivor, None, &LessonBank::default(), &ExecutionContract::default(), 1)
            .unwrap();
        assert_eq!(body, survivor.body);
    }

    #[test]
    fn strip_fences_unwraps_markdown() {
        assert_eq!(LlmMutator::strip_fences("```markdown\nbody text\n```"), "body text");
        assert_eq!(LlmMutator::strip_fences("plain"), "plain");
    }
}
