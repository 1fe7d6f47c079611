//! Persistence: estimate CSVs, summary and config sidecars, and
//! per-figure CSV bundles.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, UpsError};
use crate::estimators::{AggregateSummary, UpsEstimate};

use super::config::ExperimentConfig;
use super::runner::TuningArtifact;

/// Format a float with 17 significant digits, enough to round-trip an
/// f64 exactly.
fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| UpsError::Io(format!("creating {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| UpsError::Io(format!("writing {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| UpsError::Io(format!("reading {}: {e}", path.display())))
}

pub const ESTIMATES_HEADER: &str =
    "replicate_index,lambda,estimate,raw_e_hat,q_density,tau,cost_units,split_left_out_index";

pub fn estimates_to_csv(estimates: &[UpsEstimate]) -> String {
    let mut out = String::from(ESTIMATES_HEADER);
    out.push('\n');
    for (i, e) in estimates.iter().enumerate() {
        let split = e
            .split_left_out
            .map_or(String::new(), |idx| idx.to_string());
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{split}",
            f(e.lambda),
            f(e.value),
            f(e.raw_e_hat),
            f(e.q_density),
            e.tau,
            e.cost_units
        );
    }
    out
}

pub fn estimates_from_csv(text: &str) -> Result<Vec<UpsEstimate>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == ESTIMATES_HEADER => {}
        other => {
            return Err(UpsError::Io(format!(
                "unexpected estimates CSV header: {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(UpsError::Io(format!(
                "estimates CSV line {}: expected 8 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| UpsError::Io(format!("estimates CSV line {}: bad float '{s}'", lineno + 2)))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| UpsError::Io(format!("estimates CSV line {}: bad integer '{s}'", lineno + 2)))
        };
        out.push(UpsEstimate {
            lambda: num(fields[1])?,
            value: num(fields[2])?,
            raw_e_hat: num(fields[3])?,
            q_density: num(fields[4])?,
            tau: int(fields[5])?,
            cost_units: int(fields[6])?,
            split_left_out: if fields[7].is_empty() {
                None
            } else {
                Some(int(fields[7])?)
            },
        });
    }
    Ok(out)
}

/// Summary JSON written next to the estimates.
#[derive(Serialize)]
struct SummaryRecord<'a> {
    experiment: &'a str,
    estimand: &'a str,
    seed: u64,
    #[serde(flatten)]
    summary: &'a AggregateSummary,
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(&cfg.out)
}

pub fn tuning_path(cfg: &ExperimentConfig) -> PathBuf {
    out_dir(cfg).join("tuning.json")
}

/// Persist a tuning artifact with its config sidecar; returns the
/// artifact file path.
pub fn write_tuning(cfg: &ExperimentConfig, artifact: &TuningArtifact) -> Result<PathBuf> {
    let path = tuning_path(cfg);
    write_file(&path, &artifact.to_json()?)?;
    write_file(
        &out_dir(cfg).join("tune_config.json"),
        &serde_json::to_string_pretty(cfg)?,
    )?;
    Ok(path)
}

pub fn read_tuning(path: &Path) -> Result<TuningArtifact> {
    TuningArtifact::from_json(&read_file(path)?)
}

/// Persist estimates CSV, summary JSON and the config sidecar; returns
/// the estimates file path.
pub fn write_estimates(
    cfg: &ExperimentConfig,
    estimates: &[UpsEstimate],
    summary: &AggregateSummary,
) -> Result<PathBuf> {
    let dir = out_dir(cfg);
    let path = dir.join("estimates.csv");
    write_file(&path, &estimates_to_csv(estimates))?;
    let record = SummaryRecord {
        experiment: cfg.experiment.as_str(),
        estimand: cfg.experiment.estimand(),
        seed: cfg.seed,
        summary,
    };
    write_file(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&record)?,
    )?;
    write_file(&dir.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;
    Ok(path)
}

/// Write one CSV per figure panel from a completed run. Files are
/// emitted only when the run carries the corresponding data; empty
/// estimate lists produce header-only files.
pub fn emit_figure_data(
    cfg: &ExperimentConfig,
    artifact: &TuningArtifact,
    estimates: &[UpsEstimate],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };

    // Meeting-time samples by lambda (violin-plot data).
    let mut meetings = String::from("lambda,tau\n");
    for point in &artifact.report.points {
        for &tau in &point.meeting_times {
            let _ = writeln!(meetings, "{},{tau}", f(point.lambda));
        }
    }
    emit("fig_meetings.csv", meetings)?;

    // sqrt(m2-hat) by lambda.
    let mut sqrtm2 = String::from("lambda,sqrt_m2\n");
    for point in &artifact.report.points {
        let _ = writeln!(sqrtm2, "{},{}", f(point.lambda), f(point.sqrt_m2));
    }
    emit("fig_sqrtmeansquare.csv", sqrtm2)?;

    // (lambda, estimate) scatter.
    let mut qopt = String::from("lambda,estimate\n");
    for e in estimates {
        let _ = writeln!(qopt, "{},{}", f(e.lambda), f(e.value));
    }
    emit("fig_qopt.csv", qopt)?;

    // Histogram of the estimates.
    let mut hist = String::from("bin_low,bin_high,count\n");
    if !estimates.is_empty() {
        let lo = estimates.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
        let hi = estimates
            .iter()
            .map(|e| e.value)
            .fold(f64::NEG_INFINITY, f64::max);
        let bins = 40usize;
        let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
        let mut counts = vec![0usize; bins];
        for e in estimates {
            let b = (((e.value - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, count) in counts.into_iter().enumerate() {
            let _ = writeln!(
                hist,
                "{},{},{count}",
                f(lo + b as f64 * width),
                f(lo + (b + 1) as f64 * width)
            );
        }
    }
    emit("fig_histogram.csv", hist)?;

    // Split-indexed panels, when the experiment has them.
    if let Some(pairs) = &artifact.survey_by_index {
        let mut by_index = String::from("left_out_index,tau\n");
        for (index, tau) in pairs {
            if let Some(i) = index {
                let _ = writeln!(by_index, "{i},{tau}");
            }
        }
        emit("fig_meetings_by_index.csv", by_index)?;
    }
    if estimates.iter().any(|e| e.split_left_out.is_some()) || estimates.is_empty() {
        if cfg.experiment.estimand() == "cv" {
            let mut cv_index = String::from("left_out_index,estimate\n");
            for e in estimates {
                if let Some(i) = e.split_left_out {
                    let _ = writeln!(cv_index, "{i},{}", f(e.value));
                }
            }
            emit("fig_cv_by_index.csv", cv_index)?;
        }
    }
    Ok(written)
}
