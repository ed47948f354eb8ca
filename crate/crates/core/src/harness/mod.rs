//! Experiment orchestration behind the `gtua` CLI. Each command writes CSV
//! and JSON into an output directory together with a `run-manifest.json`;
//! progress goes to the caller through a callback.

pub mod config;
pub mod fit;
pub mod replay;
pub mod sweep;

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use config::{FitConfig, ReplayConfig, SweepConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidTolerance(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

/// A named pass/fail property with a human-readable detail line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    outputs: Vec<String>,
    checks: Option<&'a [Check]>,
    started_at: String,
    finished_at: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Output directory plus the files written so far.
struct Run {
    dir: PathBuf,
    started_at: String,
    outputs: Vec<String>,
}

impl Run {
    fn start(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), started_at: now(), outputs: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn finish<C: Serialize>(self, command: &str, config: &C, checks: Option<&[Check]>) -> Result<()> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            outputs: self.outputs,
            checks,
            started_at: self.started_at,
            finished_at: now(),
        };
        write_json(&self.dir.join("run-manifest.json"), &manifest)
    }
}

/// Writes `sweep.csv` and `regret.csv`; returns the shape checks.
pub fn cmd_sweep(config: &SweepConfig, out_dir: &Path, mut progress: impl FnMut(&str)) -> Result<Vec<Check>> {
    config.validate()?;
    let mut run = Run::start(out_dir)?;
    let result = sweep::run_sweep(config, |pt| {
        let means: Vec<String> = pt.rows.iter().map(|(a, r)| format!("{} {:.2}", a.name(), r.mean_tests)).collect();
        progress(&format!(
            "eps {:.4} (realized {:.4}{}): {}",
            pt.epsilon_target,
            pt.advice.realized,
            if pt.advice.saturated { ", saturated" } else { "" },
            means.join(", ")
        ));
    })?;
    write_csv(&run.path("sweep.csv"), result.points.iter().flat_map(|p| p.rows.iter().map(|(_, r)| r)))?;
    write_csv(&run.path("regret.csv"), result.points.iter().map(|p| &p.regret))?;
    let checks = sweep::sweep_checks(&result);
    run.finish("sweep", config, Some(&checks))?;
    Ok(checks)
}

/// Writes `model.json`, `marginals.csv`, and `fit-report.json`.
pub fn cmd_fit_gmm(config: &FitConfig, out_dir: &Path, mut progress: impl FnMut(&str)) -> Result<Vec<Check>> {
    config.validate()?;
    let mut run = Run::start(out_dir)?;
    let outcome = fit::run_fit(config)?;
    progress(&format!(
        "fitted K = {} on {} points, loglik {:.3}",
        outcome.model.k, outcome.report.training_points, outcome.model.loglik
    ));
    std::fs::write(run.path("model.json"), outcome.model.to_json()?)?;
    write_csv(&run.path("marginals.csv"), &outcome.marginals)?;
    write_json(&run.path("fit-report.json"), &outcome.report)?;
    let checks = fit::fit_checks(&outcome.report);
    run.finish("fit-gmm", config, Some(&checks))?;
    Ok(checks)
}

#[derive(Serialize)]
struct HourlyRow {
    hour: usize,
    n_users: f64,
    n_tests: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct ClockRow {
    hour_index: usize,
    present: usize,
    n_users: usize,
    n_tests: usize,
    ratio: f64,
    detected: usize,
    malicious_present: usize,
}

/// Writes `replay-hourly.csv` (hour-of-day averages), `replay-clock.csv`
/// (every simulated hour), and `replay-summary.json`.
pub fn cmd_replay(config: &ReplayConfig, out_dir: &Path, mut progress: impl FnMut(&str)) -> Result<Vec<Check>> {
    config.validate()?;
    let mut run = Run::start(out_dir)?;
    let (report, source) = replay::run_replay(config)?;
    progress(&format!(
        "model {source:?}: {} tests over {} user-hours, reduction {:.4}",
        report.total_tests, report.total_user_hours, report.reduction
    ));
    write_csv(
        &run.path("replay-hourly.csv"),
        report.by_hour_of_day.iter().map(|h| HourlyRow { hour: h.hour, n_users: h.n_users, n_tests: h.n_tests, ratio: h.ratio }),
    )?;
    write_csv(
        &run.path("replay-clock.csv"),
        report.hours.iter().map(|h| ClockRow {
            hour_index: h.hour_index,
            present: h.present,
            n_users: h.n_users,
            n_tests: h.n_tests,
            ratio: h.ratio(),
            detected: h.detected,
            malicious_present: h.malicious_present,
        }),
    )?;
    write_json(&run.path("replay-summary.json"), &replay::ReplaySummary::from(&report))?;
    let checks = replay::replay_checks(&report);
    run.finish("replay", config, Some(&checks))?;
    Ok(checks)
}
