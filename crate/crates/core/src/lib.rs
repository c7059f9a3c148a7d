//! Test-time evolution of natural-language agent skills.
//!
//! A fixed tool-using agent is steered by an injected skill document. This
//! crate evolves that document per task: repeated rollouts are scored with
//! dense trace-derived metrics, a survivor is selected pass-dominantly with
//! a noise-robust lower-confidence-bound utility, an oracle turns the
//! traces into lessons, and a mutate-and-repair stage produces the next
//! population. A budgeted runtime feedback channel exposes sanitized
//! hidden-verifier observations mid-rollout without leaking harness
//! internals.
//!
//! Module map:
//! - [`domain`]: shared value types and run configuration.
//! - [`metrics`]: dense score formulas, estimators, and calibration.
//! - [`selection`]: SelectQ and survivor choice.
//! - [`sanitizer`]: repair-or-reject post-processing of skill proposals.
//! - [`feedback`]: the budgeted `verify_feedback` policy and redaction.
//! - [`rollout`]: tool registry, turn loop, simulator, and agents.
//! - [`evolution`]: the generation update and experiment driver.
//! - [`telemetry`]: run-directory artifacts and bit-exact replay.
//! - [`server`]: the HTTP rollout protocol.

pub mod domain;
pub mod evolution;
pub mod feedback;
pub mod metrics;
pub mod rollout;
pub mod sanitizer;
pub mod selection;
pub mod server;
pub mod services;
pub mod telemetry;
pub mod text;

pub use domain::{RunConfig, Skill, Task};
pub use evolution::{run_experiment, LoopServices, TaskRunHistory};
pub use telemetry::replay::replay_metrics;
