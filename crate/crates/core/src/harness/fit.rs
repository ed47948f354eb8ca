use serde::{Deserialize, Serialize};

use super::config::FitConfig;
use super::Check;
use crate::error::Result;
use crate::gmm::{bic, fit_em, synthetic_generator, EmOptions, GmmModel, Profile};
use crate::metrics::{ks_statistic, quantile};
use crate::rng::stream_seed;
use crate::v2g::{derive_profile, ingest_sessions};

pub const COORDINATES: [&str; 3] = ["arrival", "duration", "deviation"];

/// Stream offsets keep training, held-out, and model draws independent.
const HELDOUT_STREAM: u64 = 1 << 32;
const MODEL_DRAW_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicScore {
    pub k: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub points: usize,
    pub fitted_per_point: f64,
    pub generator_per_point: f64,
    /// `|fitted - generator| / |generator|`.
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub coordinate: String,
    pub quantile: f64,
    pub data: f64,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub k: usize,
    pub training_points: usize,
    pub loglik: f64,
    pub bic: Vec<BicScore>,
    pub heldout: Option<HeldOut>,
    /// Two-sample KS statistic per coordinate, data vs model draws.
    pub ks: [f64; 3],
    pub skipped_rows: usize,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: GmmModel,
    pub report: FitReport,
    pub marginals: Vec<MarginalRow>,
}

fn options(config: &FitConfig) -> EmOptions {
    EmOptions { max_iters: config.max_iters, tol: config.tol, seed: config.seed, restarts: config.restarts }
}

/// Loads or draws the training profiles; returns them with the skipped-row count.
pub fn training_data(config: &FitConfig) -> Result<(Vec<Profile>, usize)> {
    if config.synthetic {
        return Ok((synthetic_generator().sample_raw(config.synthetic_points, config.seed), 0));
    }
    let path = config.input.as_ref().expect("validated");
    let ingested = ingest_sessions(path)?;
    Ok((ingested.records.iter().map(derive_profile).collect(), ingested.warnings.len()))
}

/// Fits every `K` in `1..=k_max` and keeps the smallest BIC.
pub fn select_by_bic(points: &[Profile], k_max: usize, opts: &EmOptions) -> Result<(GmmModel, Vec<BicScore>)> {
    let mut scores = Vec::new();
    let mut best: Option<(GmmModel, f64)> = None;
    for k in 1..=k_max {
        let model = fit_em(points, k, opts)?;
        let score = bic(&model, points);
        scores.push(BicScore { k, bic: score });
        if best.as_ref().is_none_or(|(_, b)| score < *b) {
            best = Some((model, score));
        }
    }
    Ok((best.expect("k_max >= 1").0, scores))
}

pub fn run_fit(config: &FitConfig) -> Result<FitOutcome> {
    config.validate()?;
    let (data, skipped_rows) = training_data(config)?;
    let opts = options(config);
    let (model, bic_scores) = if config.bic_select {
        select_by_bic(&data, config.k_max, &opts)?
    } else {
        let model = fit_em(&data, config.k, &opts)?;
        let score = bic(&model, &data);
        (model, vec![BicScore { k: config.k, bic: score }])
    };

    let heldout = config.synthetic.then(|| {
        let generator = synthetic_generator();
        let points = generator.sample_raw(config.synthetic_points, stream_seed(config.seed, HELDOUT_STREAM));
        let m = points.len() as f64;
        let fitted_per_point = model.log_likelihood(&points) / m;
        let generator_per_point = generator.log_likelihood(&points) / m;
        HeldOut {
            points: points.len(),
            fitted_per_point,
            generator_per_point,
            relative_gap: (fitted_per_point - generator_per_point).abs() / generator_per_point.abs(),
        }
    });

    let draws = model.sample_raw(config.marginal_samples, stream_seed(config.seed, MODEL_DRAW_STREAM));
    let mut ks = [0.0; 3];
    let mut marginals = Vec::new();
    for (c, name) in COORDINATES.iter().enumerate() {
        let mut a: Vec<f64> = data.iter().map(|p| p.as_array()[c]).collect();
        let mut b: Vec<f64> = draws.iter().map(|p| p.as_array()[c]).collect();
        ks[c] = ks_statistic(&a, &b);
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for i in 1..100 {
            let prob = i as f64 / 100.0;
            marginals.push(MarginalRow {
                coordinate: name.to_string(),
                quantile: prob,
                data: quantile(&a, prob),
                model: quantile(&b, prob),
            });
        }
    }

    let report = FitReport {
        k: model.k,
        training_points: data.len(),
        loglik: model.loglik,
        bic: bic_scores,
        heldout,
        ks,
        skipped_rows,
    };
    Ok(FitOutcome { model, report, marginals })
}

/// Per-coordinate KS below 0.05; on synthetic data, held-out likelihood within
/// 2% of the generator's.
pub fn fit_checks(report: &FitReport) -> Vec<Check> {
    let mut checks: Vec<Check> = COORDINATES
        .iter()
        .zip(report.ks)
        .map(|(name, ks)| Check::new(&format!("ks-{name}"), ks < 0.05, format!("KS = {ks:.4} (need < 0.05)")))
        .collect();
    if let Some(h) = report.heldout {
        checks.push(Check::new(
            "heldout-loglik",
            h.relative_gap <= 0.02,
            format!(
                "fitted {:.5} vs generator {:.5} per point, gap {:.4}",
                h.fitted_per_point, h.generator_per_point, h.relative_gap
            ),
        ));
    }
    checks
}
