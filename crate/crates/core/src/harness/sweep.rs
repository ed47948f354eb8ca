use serde::{Deserialize, Serialize};

use super::config::SweepConfig;
use super::Check;
use crate::advice::{perturb_to_target, AdviceVector, PerturbedAdvice};
use crate::error::{Error, Result};
use crate::metrics::{estimate_regret, run_trials, spearman, Algorithm, RegretReport};
use crate::oracle::ProbVector;
use crate::scheme::GtuaConfig;

/// One CSV row: an algorithm's test count at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon_target: f64,
    pub epsilon_realized: f64,
    pub algo: String,
    pub mean_tests: f64,
    pub std_tests: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub epsilon_target: f64,
    pub advice: PerturbedAdvice,
    pub rows: Vec<(Algorithm, SweepRow)>,
    pub regret: RegretReport,
}

impl SweepPoint {
    pub fn mean(&self, algo: Algorithm) -> f64 {
        self.rows.iter().find(|(a, _)| *a == algo).map(|(_, r)| r.mean_tests).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub n: usize,
    pub d: f64,
    pub eta: f64,
    pub tolerance: f64,
    pub points: Vec<SweepPoint>,
}

/// Reads probabilities separated by commas or whitespace.
pub fn read_p_file(path: &std::path::Path) -> Result<ProbVector> {
    let text = std::fs::read_to_string(path)?;
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| Error::InvalidData(format!("{t:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::NoData);
    }
    ProbVector::new(values)
}

pub fn truth_vector(config: &SweepConfig) -> Result<ProbVector> {
    match &config.p_file {
        Some(path) => read_p_file(path),
        None => ProbVector::uniform(config.n, config.d / config.n as f64),
    }
}

/// Runs every algorithm at every grid point. Trials at each point share
/// instance seeds across algorithms, and the noise direction is shared
/// across points, so only the noise scale changes along the grid.
pub fn run_sweep(config: &SweepConfig, mut progress: impl FnMut(&SweepPoint)) -> Result<SweepResult> {
    config.validate()?;
    let grid = config.grid()?;
    let p = truth_vector(config)?;
    let n = p.len();
    let d = p.mass();
    let gtua = GtuaConfig { eta: config.eta.unwrap_or(1.0 / n as f64), pool_estimate: config.pool_estimate };
    gtua.validate(n).map_err(|e| Error::Config(e.to_string()))?;

    let mut points = Vec::with_capacity(grid.len());
    for &target in &grid {
        let advice = perturb_to_target(&p, target, config.seed, config.tolerance)?;
        let point = run_point(&p, target, advice, &gtua, config)?;
        progress(&point);
        points.push(point);
    }
    Ok(SweepResult { n, d, eta: gtua.eta, tolerance: config.tolerance, points })
}

fn run_point(
    p: &ProbVector,
    target: f64,
    advice: PerturbedAdvice,
    gtua: &GtuaConfig,
    config: &SweepConfig,
) -> Result<SweepPoint> {
    let q: &AdviceVector = &advice.advice;
    let mut rows = Vec::with_capacity(Algorithm::ALL.len());
    for algo in Algorithm::ALL {
        let batch = run_trials(p, config.trials, config.seed, |s| algo.run(s, q, gtua))?;
        if batch.failures > 0 {
            return Err(Error::PreconditionViolated(format!(
                "{} missed the malicious set in {} trials",
                algo.name(),
                batch.failures
            )));
        }
        let stats = batch.stats();
        rows.push((
            algo,
            SweepRow {
                epsilon_target: target,
                epsilon_realized: advice.realized,
                algo: algo.name().to_string(),
                mean_tests: stats.mean,
                std_tests: stats.std,
                trials: config.trials,
                seed: config.seed,
            },
        ));
    }
    let mut regret = estimate_regret(p, q, gtua, config.trials, config.seed)?;
    regret.epsilon_target = target;
    Ok(SweepPoint { epsilon_target: target, advice, rows, regret })
}

/// Shape properties of the sweep: advice-free GBS is flat, LA degrades with
/// the divergence, the scheme stays within `2d` of the better baseline and
/// near LA at zero divergence, and every point respects the regret bound.
pub fn sweep_checks(result: &SweepResult) -> Vec<Check> {
    let pts = &result.points;
    let mut checks = Vec::new();

    let gbs: Vec<f64> = pts.iter().map(|p| p.mean(Algorithm::Gbs)).collect();
    checks.push(Check::new(
        "gbs-constant",
        gbs.iter().all(|&m| m == gbs[0]),
        format!("GBS means {gbs:?}"),
    ));

    let eps: Vec<f64> = pts.iter().map(|p| p.advice.realized).collect();
    let la: Vec<f64> = pts.iter().map(|p| p.mean(Algorithm::La)).collect();
    if pts.len() >= 3 {
        let rho = spearman(&eps, &la);
        checks.push(Check::new("la-rank-correlation", rho >= 0.9, format!("spearman = {rho:.4} (need >= 0.9)")));
    }

    let slack = 2.0 * result.d;
    let worst = pts
        .iter()
        .map(|p| (p.epsilon_target, p.mean(Algorithm::Gtua) - p.mean(Algorithm::La).min(p.mean(Algorithm::Gbs))))
        .fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    checks.push(Check::new(
        "gtua-robust",
        worst.1 <= slack,
        format!("max GTUA - min(LA, GBS) = {:.3} at eps {} (allowed {slack})", worst.1, worst.0),
    ));

    if let Some(zero) = pts.iter().find(|p| p.epsilon_target == 0.0) {
        let (g, l) = (zero.mean(Algorithm::Gtua), zero.mean(Algorithm::La));
        checks.push(Check::new(
            "gtua-consistent",
            (g - l).abs() <= 0.1 * l,
            format!("at eps 0: GTUA {g:.3}, LA {l:.3}"),
        ));
    }

    let violations: Vec<f64> =
        pts.iter().filter(|p| !p.regret.within_bound()).map(|p| p.epsilon_target).collect();
    checks.push(Check::new("regret-bound", violations.is_empty(), format!("violations at eps {violations:?}")));

    let misses: Vec<f64> = pts
        .iter()
        .filter(|p| !p.advice.saturated && p.epsilon_target > 0.0)
        .filter(|p| (p.advice.realized - p.epsilon_target).abs() > result.tolerance * p.epsilon_target)
        .map(|p| p.epsilon_target)
        .collect();
    checks.push(Check::new("divergence-targeting", misses.is_empty(), format!("missed targets {misses:?}")));
    checks
}
