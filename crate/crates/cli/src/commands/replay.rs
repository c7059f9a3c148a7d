//! `replay`: recompute all dense metrics and survivor decisions from run
//! artifacts and fail on any divergence.

use std::path::PathBuf;

use anyhow::Result;

use evoskill_core::telemetry::replay::replay_metrics;

pub struct ReplayOptions {
    pub roots: Vec<PathBuf>,
}

pub fn cmd_replay(options: &ReplayOptions) -> Result<i32> {
    let runs = super::report::discover_runs_for(&options.roots);
    if runs.is_empty() {
        anyhow::bail!("no run directories (status.json) found under the given roots");
    }
    let mut dirty = false;
    for run in &runs {
        let report = replay_metrics(run)?;
        let survivors_ok = report
            .generations
            .iter()
            .all(|g| g.recomputed_survivor == g.stored_survivor);
        if report.is_clean() && survivors_ok {
            println!(
                "{}: {} generations, zero diffs, survivors reproduced",
                run.display(),
                report.generations.len()
            );
        } else {
            dirty = true;
            println!(
                "{}: {} diffs, survivors reproduced: {}",
                run.display(),
                report.diffs.len(),
                survivors_ok
            );
            for diff in report.diffs.iter().take(20) {
                println!(
                    "  gen{} {} {}: stored={} recomputed={}",
                    diff.generation, diff.skill_id, diff.field, diff.stored, diff.recomputed
                );
            }
        }
    }
    Ok(if dirty { 1 } else { 0 })
}
