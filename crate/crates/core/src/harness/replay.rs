use serde::{Deserialize, Serialize};

use super::config::ReplayConfig;
use super::Check;
use crate::error::Result;
use crate::gmm::{fit_em, sample, synthetic_generator, EmOptions, GmmModel};
use crate::v2g::{derive_profile, ingest_sessions, replay, ReplayOptions, ReplayReport};

/// Keeps profile draws apart from the day-placement stream of the same seed.
const PROFILE_STREAM: u64 = 3 << 32;

pub const REDUCTION_BAND: (f64, f64) = (0.40, 0.80);
pub const RATIO_BAND: (f64, f64) = (0.15, 0.70);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub total_tests: usize,
    pub total_user_hours: usize,
    pub reduction: f64,
    pub seed: u64,
}

impl From<&ReplayReport> for ReplaySummary {
    fn from(r: &ReplayReport) -> Self {
        Self {
            total_tests: r.total_tests,
            total_user_hours: r.total_user_hours,
            reduction: r.reduction,
            seed: r.seed,
        }
    }
}

/// Where the replay model came from, for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSource {
    File(String),
    FittedInline(String),
    BuiltIn,
}

pub fn replay_model(config: &ReplayConfig) -> Result<(GmmModel, ModelSource)> {
    if let Some(path) = &config.model {
        let text = std::fs::read_to_string(path)?;
        return Ok((GmmModel::from_json(&text)?, ModelSource::File(path.display().to_string())));
    }
    if let Some(path) = &config.input {
        let ingested = ingest_sessions(path)?;
        let points: Vec<_> = ingested.records.iter().map(derive_profile).collect();
        let model = fit_em(&points, config.k, &EmOptions::with_seed(config.seed))?;
        return Ok((model, ModelSource::FittedInline(path.display().to_string())));
    }
    Ok((synthetic_generator(), ModelSource::BuiltIn))
}

pub fn run_replay(config: &ReplayConfig) -> Result<(ReplayReport, ModelSource)> {
    config.validate()?;
    let (model, source) = replay_model(config)?;
    let profiles = sample(&model, config.samples, config.seed.wrapping_add(PROFILE_STREAM));
    let options = ReplayOptions {
        eta: config.eta,
        horizon_hours: config.horizon_hours,
        seed: config.seed,
        threshold: config.threshold,
        pool_estimate: config.pool_estimate,
    };
    Ok((replay(&profiles, &model, &options)?, source))
}

pub fn replay_checks(report: &ReplayReport) -> Vec<Check> {
    let (lo, hi) = REDUCTION_BAND;
    let mut checks = vec![Check::new(
        "reduction-band",
        (lo..=hi).contains(&report.reduction),
        format!("reduction {:.4} (band [{lo}, {hi}])", report.reduction),
    )];
    let (lo, hi) = RATIO_BAND;
    let outside: Vec<String> = report
        .by_hour_of_day
        .iter()
        .filter(|h| !(lo..=hi).contains(&h.ratio))
        .map(|h| format!("hour {} ratio {:.3}", h.hour, h.ratio))
        .collect();
    checks.push(Check::new(
        "hourly-ratio-band",
        outside.is_empty() && report.by_hour_of_day.len() == 24,
        if outside.is_empty() {
            format!("{} hours within [{lo}, {hi}]", report.by_hour_of_day.len())
        } else {
            outside.join(", ")
        },
    ));
    checks
}
