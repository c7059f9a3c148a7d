//! `calibrate`: point-biserial correlation and AUC of per-rollout progress
//! scores against final verifier labels, plus grouped scatter data.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};

use evoskill_core::metrics::calibration::{calibrate, CalibrationError};
use evoskill_core::telemetry::RolloutDiagnostic;

pub struct CalibrateOptions {
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
}

fn collect_diagnostics(inputs: &[PathBuf]) -> Result<Vec<RolloutDiagnostic>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_file() {
            files.push(input.clone());
        } else if input.is_dir() {
            walk(input, &mut files)?;
        } else {
            anyhow::bail!("input {} does not exist", input.display());
        }
    }
    files.sort();
    let mut diagnostics = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file)
            .with_context(|| format!("reading {}", file.display()))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let diagnostic: RolloutDiagnostic = serde_json::from_str(line)
                .with_context(|| format!("parsing {}", file.display()))?;
            diagnostics.push(diagnostic);
        }
    }
    Ok(diagnostics)
}

fn walk(dir: &PathBuf, files: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, files)?;
        } else if path.file_name().is_some_and(|n| n == "rollout_diagnostics.jsonl") {
            files.push(path);
        }
    }
    Ok(())
}

pub fn cmd_calibrate(options: &CalibrateOptions) -> Result<i32> {
    let diagnostics = collect_diagnostics(&options.inputs)?;
    if diagnostics.is_empty() {
        anyhow::bail!("no rollout diagnostics found in the given inputs");
    }
    let scores: Vec<f64> = diagnostics.iter().map(|d| d.f_progress).collect();
    let labels: Vec<bool> = diagnostics.iter().map(|d| d.outcome == "pass").collect();

    let report = match calibrate(&scores, &labels) {
        Ok(report) => report,
        Err(error @ CalibrationError::DegenerateInput(_)) => {
            eprintln!("calibration impossible: {error}");
            return Ok(1);
        }
        Err(error) => return Err(error.into()),
    };

    std::fs::create_dir_all(&options.out)?;
    let mut scatter = String::from("score\tlabel\tcategory\ttask\tskill\n");
    for diagnostic in &diagnostics {
        writeln!(
            scatter,
            "{:.6}\t{}\t{}\t{}\t{}",
            diagnostic.f_progress,
            if diagnostic.outcome == "pass" { 1 } else { 0 },
            diagnostic.category_id,
            diagnostic.task_id,
            diagnostic.skill_id,
        )?;
    }
    let scatter_file = options.out.join("calibration_scatter.tsv");
    std::fs::write(&scatter_file, scatter)?;
    let report_file = options.out.join("calibration.json");
    std::fs::write(
        &report_file,
        serde_json::to_string_pretty(&serde_json::json!({
            "rollouts": diagnostics.len(),
            "positives": report.positives,
            "negatives": report.negatives,
            "point_biserial_r": report.point_biserial,
            "auc": report.auc,
        }))?,
    )?;

    println!(
        "calibration over {} rollouts: r={:.4} AUC={:.4} ({} pass, {} fail)",
        diagnostics.len(),
        report.point_biserial,
        report.auc,
        report.positives,
        report.negatives
    );
    println!("wrote {}", scatter_file.display());
    println!("wrote {}", report_file.display());
    Ok(0)
}
