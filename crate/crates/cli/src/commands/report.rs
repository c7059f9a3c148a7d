//! `report`: per-generation quality tables (mean and SEM over valid
//! candidates) and a task-by-condition pass grid, emitted as TSV data files
//! for external plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};

use evoskill_core::telemetry::{
    ArtifactFamily, RolloutDiagnostic, RunStore, SelectionFitnessDoc, StatusDoc,
};

pub struct ReportOptions {
    pub roots: Vec<PathBuf>,
    pub out: PathBuf,
}

/// A run directory is anything holding a status.json.
fn discover_runs(roots: &[PathBuf]) -> Vec<PathBuf> {
    let mut runs = Vec::new();
    for root in roots {
        if root.join("status.json").exists() {
            runs.push(root.clone());
            continue;
        }
        if let Ok(entries) = std::fs::read_dir(root) {
            let mut children: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("status.json").exists())
                .collect();
            children.sort();
            runs.append(&mut children);
        }
    }
    runs
}

fn mean_and_sem(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        // SEM is undefined for a single measurement: absent, not zero.
        return (mean, None);
    }
    let sample_var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((sample_var / n).sqrt()))
}

fn format_sem(sem: Option<f64>) -> String {
    sem.map(|s| format!("{s:.6}")).unwrap_or_default()
}

struct RunSummary {
    task_id: String,
    condition: String,
    passes: u64,
    rollouts: u64,
}

pub fn cmd_report(options: &ReportOptions) -> Result<i32> {
    let runs = discover_runs(&options.roots);
    if runs.is_empty() {
        anyhow::bail!("no run directories (status.json) found under the given roots");
    }
    std::fs::create_dir_all(&options.out)
        .with_context(|| format!("creating report dir {}", options.out.display()))?;

    let mut summaries = Vec::new();
    for run in &runs {
        let store = RunStore::create(run)?;
        let status: StatusDoc = store.read_json(None, ArtifactFamily::Status)?;

        let mut table = String::new();
        let mut notes = Vec::new();
        writeln!(
            table,
            "generation\tSelectQ_mean\tSelectQ_sem\tSkillQ_mean\tSkillQ_sem\t\
             AgentProgressQ_mean\tAgentProgressQ_sem\tAgentVarianceQ_mean\tAgentVarianceQ_sem\t\
             valid_n"
        )?;
        let mut passes = 0u64;
        let mut rollouts = 0u64;
        for generation in store.generations()? {
            let fitness: SelectionFitnessDoc =
                store.read_json(Some(generation), ArtifactFamily::SelectionFitness)?;
            let diagnostics: Vec<RolloutDiagnostic> =
                store.read_lines(Some(generation), ArtifactFamily::RolloutDiagnostics)?;
            rollouts += diagnostics.len() as u64;
            passes += diagnostics.iter().filter(|d| d.outcome == "pass").count() as u64;

            let valid: Vec<_> = fitness.candidates.iter().filter(|c| !c.invalid).collect();
            if valid.is_empty() {
                // Excluded from means so trends reflect viable choices only.
                notes.push(format!("# generation {generation}: no valid candidates; excluded"));
                writeln!(table, "{generation}\t\t\t\t\t\t\t\t\t0")?;
                continue;
            }
            let select: Vec<f64> = valid.iter().map(|c| c.select_q).collect();
            let skill: Vec<f64> = valid.iter().map(|c| c.skill_q).collect();
            let progress: Vec<f64> = valid.iter().map(|c| c.agent_behavior_q).collect();
            let variance: Vec<f64> = valid.iter().map(|c| c.agent_variance_q).collect();
            let (select_mean, select_sem) = mean_and_sem(&select);
            let (skill_mean, skill_sem) = mean_and_sem(&skill);
            let (progress_mean, progress_sem) = mean_and_sem(&progress);
            let (variance_mean, variance_sem) = mean_and_sem(&variance);
            writeln!(
                table,
                "{generation}\t{select_mean:.6}\t{}\t{skill_mean:.6}\t{}\t{progress_mean:.6}\t\
                 {}\t{variance_mean:.6}\t{}\t{}",
                format_sem(select_sem),
                format_sem(skill_sem),
                format_sem(progress_sem),
                format_sem(variance_sem),
                valid.len(),
            )?;
        }
        let mut contents = String::new();
        for note in &notes {
            contents.push_str(note);
            contents.push('\n');
        }
        contents.push_str(&table);
        let file = options.out.join(format!("quality_{}.tsv", status.run_id));
        std::fs::write(&file, contents)?;
        println!("wrote {}", file.display());

        summaries.push(RunSummary {
            task_id: status.task_id,
            condition: status.condition,
            passes,
            rollouts,
        });
    }

    // Task x condition pass-count grid.
    let mut conditions: Vec<String> = summaries.iter().map(|s| s.condition.clone()).collect();
    conditions.sort();
    conditions.dedup();
    let mut by_task: BTreeMap<String, BTreeMap<String, (u64, u64)>> = BTreeMap::new();
    for summary in &summaries {
        let cell = by_task
            .entry(summary.task_id.clone())
            .or_default()
            .entry(summary.condition.clone())
            .or_insert((0, 0));
        cell.0 += summary.passes;
        cell.1 += summary.rollouts;
    }
    let mut grid = String::from("task");
    for condition in &conditions {
        write!(grid, "\t{condition}")?;
    }
    grid.push('\n');
    for (task, cells) in &by_task {
        write!(grid, "{task}")?;
        for condition in &conditions {
            match cells.get(condition) {
                None => grid.push('\t'),
                Some((passes, total)) => {
                    let rate = if *total == 0 { 0.0 } else { *passes as f64 / *total as f64 };
                    write!(grid, "\t{passes}/{total} ({:.1}%)", rate * 100.0)?;
                }
            }
        }
        grid.push('\n');
    }
    let grid_file = options.out.join("pass_grid.tsv");
    std::fs::write(&grid_file, grid)?;
    println!("wrote {}", grid_file.display());
    Ok(0)
}

pub(crate) fn discover_runs_for(roots: &[PathBuf]) -> Vec<PathBuf> {
    discover_runs(roots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sem_is_absent_for_single_measurements() {
        let (mean, sem) = mean_and_sem(&[0.5]);
        assert_eq!(mean, 0.5);
        assert!(sem.is_none());
        let (_, sem) = mean_and_sem(&[0.4, 0.6]);
        assert!(sem.unwrap() > 0.0);
    }
}
