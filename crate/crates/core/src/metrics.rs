//! Closed-form bounds and Monte Carlo estimates.
//!
//! Information quantities are in nats. Group sizing in binary splitting is in
//! base 2 because it indexes powers of two.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advice::{pseudo_kl_over, AdviceVector};
use crate::error::{Error, Result};
use crate::gbs::run_gbs;
use crate::la::run_la;
use crate::oracle::{sample_instance, verify_detection, Instance, ProbVector, Subset, TestSession};
use crate::rng::stream_seed;
use crate::scheme::{partition_pools, run_gtua, GtuaConfig};

fn xlog_inv(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.ln()
    }
}

/// Entropy of independent Bernoulli(p_i) variables, in nats.
pub fn entropy(p: &ProbVector) -> f64 {
    p.values().iter().map(|&pi| xlog_inv(pi) + xlog_inv(1.0 - pi)).sum()
}

/// `2 + 6 / ln(n / d)`.
pub fn tightness_gap_bound(n: usize, d: f64) -> Result<f64> {
    let ratio = n as f64 / d;
    if !(d > 0.0) || !(ratio > 1.0) {
        return Err(Error::InvalidRegime(format!("need n > d > 0, got n = {n}, d = {d}")));
    }
    Ok(2.0 + 6.0 / ratio.ln())
}

/// Expected-test bound for the Laminar Algorithm run on advice `q`:
/// `2 sum p_i ln(1/q_i) + 6 d`.
pub fn la_prediction_bound(p: &ProbVector, q: &AdviceVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    let mut cross = 0.0;
    for (i, (&pi, &qi)) in p.values().iter().zip(q.values()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::DivergenceUndefined { index: i });
        }
        cross -= pi * qi.ln();
    }
    Ok(2.0 * cross + 6.0 * p.mass())
}

/// Worst-case tests of generalized binary splitting with `d` defectives among `n`:
/// `d (floor(log2((n - d + 1) / d)) + 2) + d - 1`, or 1 when `d = 0`.
///
/// When `n <= 2d - 2` the algorithm tests every item individually and the
/// bound is `n`.
pub fn gbs_bound(n: usize, d: usize) -> usize {
    if d == 0 {
        return 1;
    }
    assert!(d <= n, "gbs_bound needs d <= n");
    if n + 2 <= 2 * d {
        return n;
    }
    let alpha = ((n - d + 1) / d).ilog2() as usize;
    d * (alpha + 2) + d - 1
}

/// Regret bound of the safety-threshold scheme:
/// `2 min(d ln(1/eta), eps_p) + 2 min(d ln n, eps_c + d ln(eta n))`.
pub fn theorem1_bound(d: f64, n: usize, eta: f64, eps_p: f64, eps_c: f64) -> f64 {
    let n = n as f64;
    2.0 * (d * (1.0 / eta).ln()).min(eps_p) + 2.0 * (d * n.ln()).min(eps_c + d * (eta * n).ln())
}

/// Running mean and variance with compensated sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl SampleStats {
    /// Sample statistics; the standard deviation of a single value is 0.
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self::default();
        }
        let mean = neumaier_sum(values.iter().copied()) / count as f64;
        let std = if count > 1 {
            let ss = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { count, mean, std }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std / (self.count as f64).sqrt()
        }
    }
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let rank = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = rank;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut sup) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    La,
    Gbs,
    Gtua,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::La, Algorithm::Gbs, Algorithm::Gtua];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::La => "LA",
            Algorithm::Gbs => "GBS",
            Algorithm::Gtua => "GTUA",
        }
    }

    /// Runs on the whole population. Binary splitting ignores the advice values
    /// and only reads the budget as its estimate.
    pub fn run(self, session: &mut TestSession<'_>, q: &AdviceVector, config: &GtuaConfig) -> Result<Subset> {
        let all = Subset::range(0, q.len());
        match self {
            Algorithm::La => run_la(session, &all, q),
            Algorithm::Gbs => run_gbs(session, &all, q.budget().ceil() as usize),
            Algorithm::Gtua => Ok(run_gtua(session, q, config)?.detected),
        }
    }
}

/// Test counts from independent trials on freshly sampled instances.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    pub tests: Vec<usize>,
    /// Trials whose reported set differed from the truth.
    pub failures: usize,
}

impl TrialBatch {
    pub fn stats(&self) -> SampleStats {
        let v: Vec<f64> = self.tests.iter().map(|&t| t as f64).collect();
        SampleStats::from_values(&v)
    }
}

/// Runs `trials` instances drawn from `p`, trial `t` seeded with `seed + t`.
pub fn run_trials<F>(p: &ProbVector, trials: usize, seed: u64, run: F) -> Result<TrialBatch>
where
    F: Fn(&mut TestSession<'_>) -> Result<Subset> + Sync,
{
    let outcomes: Vec<(usize, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let instance = sample_instance(p, stream_seed(seed, t as u64))?;
            run_one(&instance, &run)
        })
        .collect::<Result<_>>()?;
    Ok(TrialBatch {
        tests: outcomes.iter().map(|o| o.0).collect(),
        failures: outcomes.iter().filter(|o| !o.1).count(),
    })
}

fn run_one<F>(instance: &Instance, run: &F) -> Result<(usize, bool)>
where
    F: Fn(&mut TestSession<'_>) -> Result<Subset>,
{
    let mut session = TestSession::new(instance);
    let reported = run(&mut session)?;
    Ok((session.tests_used(), verify_detection(instance, &reported)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub epsilon_target: f64,
    pub epsilon_realized: f64,
    pub eps_p: f64,
    pub eps_c: f64,
    pub mean_tests: f64,
    pub std_tests: f64,
    pub trials: usize,
    pub kappa: f64,
    pub entropy_nats: f64,
    pub empirical_regret: f64,
    pub theorem1_rhs: f64,
}

impl RegretReport {
    /// Monte Carlo slack: three standard errors of the mean.
    pub fn slack(&self) -> f64 {
        3.0 * self.std_tests / (self.trials as f64).sqrt()
    }

    pub fn within_bound(&self) -> bool {
        self.empirical_regret <= self.theorem1_rhs + self.slack()
    }
}

/// Runs the scheme on `trials` sampled instances and compares its mean test
/// count against `kappa * H(X)`, with `kappa = 2 + 6 / ln(n/d)`.
pub fn estimate_regret(
    p: &ProbVector,
    q: &AdviceVector,
    config: &GtuaConfig,
    trials: usize,
    seed: u64,
) -> Result<RegretReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let n = p.len();
    let d = p.mass();
    let batch = run_trials(p, trials, seed, |s| Ok(run_gtua(s, q, config)?.detected))?;
    if batch.failures > 0 {
        return Err(Error::PreconditionViolated(format!("{} trials failed exact recovery", batch.failures)));
    }
    let stats = batch.stats();
    let (pool_p, pool_c) = partition_pools(q, config.eta);
    let eps_p = pseudo_kl_over(p, q, pool_p.members())?;
    let eps_c = pseudo_kl_over(p, q, pool_c.members())?;
    let kappa = tightness_gap_bound(n, d)?;
    let entropy_nats = entropy(p);
    let realized = eps_p + eps_c;
    Ok(RegretReport {
        epsilon_target: realized,
        epsilon_realized: realized,
        eps_p,
        eps_c,
        mean_tests: stats.mean,
        std_tests: stats.std,
        trials,
        kappa,
        entropy_nats,
        empirical_regret: stats.mean - kappa * entropy_nats,
        // Per-pool sums can be negative; zero is then a valid upper bound.
        theorem1_rhs: theorem1_bound(d, n, config.eta, eps_p.max(0.0), eps_c.max(0.0)),
    })
}
