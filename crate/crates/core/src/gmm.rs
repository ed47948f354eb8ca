//! Three-dimensional Gaussian mixtures over charging profiles
//! `(arrival, duration, deviation)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::{stream_seed, SplitMix64};

/// Added to every covariance diagonal after each M-step.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One charging session as arrival hour-of-day, stay length, and departure
/// deviation (actual minus requested), all in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub arrival: f64,
    pub duration: f64,
    pub deviation: f64,
}

impl Profile {
    pub fn new(arrival: f64, duration: f64, deviation: f64) -> Self {
        Self { arrival, duration, deviation }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.arrival, self.duration, self.deviation]
    }

    fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Wraps arrival into `[0, 24)` and clamps duration at zero.
    pub fn into_valid(self) -> Self {
        let mut arrival = self.arrival.rem_euclid(24.0);
        if arrival >= 24.0 {
            arrival = 0.0;
        }
        Self { arrival, duration: self.duration.max(0.0), deviation: self.deviation }
    }
}

type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];

/// Lower-triangular Cholesky factor of a 3x3 SPD matrix.
#[derive(Debug, Clone, Copy)]
struct Cholesky3 {
    l: Mat3,
    log_det: f64,
}

impl Cholesky3 {
    fn new(a: &Mat3) -> Option<Self> {
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        let log_det = 2.0 * (l[0][0].ln() + l[1][1].ln() + l[2][2].ln());
        Some(Self { l, log_det })
    }

    /// Squared Mahalanobis norm of `v`.
    fn mahalanobis(&self, v: &Vec3) -> f64 {
        let l = &self.l;
        let y0 = v[0] / l[0][0];
        let y1 = (v[1] - l[1][0] * y0) / l[1][1];
        let y2 = (v[2] - l[2][0] * y0 - l[2][1] * y1) / l[2][2];
        y0 * y0 + y1 * y1 + y2 * y2
    }

    fn transform(&self, z: &Vec3) -> Vec3 {
        let l = &self.l;
        [
            l[0][0] * z[0],
            l[1][0] * z[0] + l[1][1] * z[1],
            l[2][0] * z[0] + l[2][1] * z[1] + l[2][2] * z[2],
        ]
    }
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// A fitted (or specified) mixture. Serializes to
/// `{K, weights, means, covariances, seed, loglik}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    #[serde(rename = "K")]
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec3>,
    pub covariances: Vec<Mat3>,
    pub seed: u64,
    pub loglik: f64,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec3>, covariances: Vec<Mat3>) -> Result<Self> {
        let model = Self { k: weights.len(), weights, means, covariances, seed: 0, loglik: f64::NAN };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 || self.weights.len() != k || self.means.len() != k || self.covariances.len() != k {
            return Err(Error::InvalidData(format!("inconsistent component count {k}")));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData("weights must be non-negative and sum to 1".into()));
        }
        for (i, c) in self.covariances.iter().enumerate() {
            let symmetric = (0..3).all(|r| (0..3).all(|s| (c[r][s] - c[s][r]).abs() <= 1e-12 * (1.0 + c[r][s].abs())));
            if !symmetric || Cholesky3::new(c).is_none() {
                return Err(Error::InvalidData(format!("covariance {i} is not symmetric positive-definite")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    fn factors(&self) -> Vec<Cholesky3> {
        self.covariances
            .iter()
            .map(|c| Cholesky3::new(c).expect("validated covariance"))
            .collect()
    }

    /// Log density of the mixture at `x`.
    pub fn log_density(&self, x: &Profile) -> f64 {
        let factors = self.factors();
        let mut terms = vec![0.0; self.k];
        self.component_log_terms(&factors, &x.as_array(), &mut terms);
        log_sum_exp(&terms)
    }

    fn component_log_terms(&self, factors: &[Cholesky3], x: &Vec3, out: &mut [f64]) {
        for (j, f) in factors.iter().enumerate() {
            let w = self.weights[j];
            out[j] = if w > 0.0 {
                w.ln() - 0.5 * (f.mahalanobis(&sub(x, &self.means[j])) + 3.0 * LN_2PI + f.log_det)
            } else {
                f64::NEG_INFINITY
            };
        }
    }

    /// Total log-likelihood of `points`.
    pub fn log_likelihood(&self, points: &[Profile]) -> f64 {
        let factors = self.factors();
        let per_point: Vec<f64> = points
            .par_iter()
            .map(|p| {
                let mut terms = vec![0.0; self.k];
                self.component_log_terms(&factors, &p.as_array(), &mut terms);
                log_sum_exp(&terms)
            })
            .collect();
        per_point.iter().sum()
    }

    /// Draws without post-processing.
    pub fn sample_raw(&self, m: usize, seed: u64) -> Vec<Profile> {
        let factors = self.factors();
        let mut rng = SplitMix64::new(seed);
        (0..m)
            .map(|_| {
                let j = rng.next_categorical(&self.weights);
                let z = [rng.next_normal(), rng.next_normal(), rng.next_normal()];
                let offset = factors[j].transform(&z);
                let mu = &self.means[j];
                Profile::from_array([mu[0] + offset[0], mu[1] + offset[1], mu[2] + offset[2]])
            })
            .collect()
    }
}

/// `m` profiles drawn from `model`, with arrival wrapped into `[0, 24)` and
/// duration clamped at zero.
pub fn sample(model: &GmmModel, m: usize, seed: u64) -> Vec<Profile> {
    model.sample_raw(m, seed).into_iter().map(Profile::into_valid).collect()
}

/// `P(deviation > threshold | arrival, duration)` under the mixture: the
/// conditional Gaussian tail of each component, weighted by the component's
/// posterior responsibility for the observed `(arrival, duration)`.
pub fn tail_prob_deviation(model: &GmmModel, arrival: f64, duration: f64, threshold: f64) -> Result<f64> {
    let x = [arrival, duration];
    let mut log_w = Vec::with_capacity(model.k);
    let mut tails = Vec::with_capacity(model.k);
    for j in 0..model.k {
        let mu = &model.means[j];
        let c = &model.covariances[j];
        // Marginal of (arrival, duration) and the regression of deviation on it.
        let (saa, sad, sdd) = (c[0][0], c[0][1], c[1][1]);
        let det = saa * sdd - sad * sad;
        if !(det > 0.0) {
            return Err(Error::DegenerateConditional(j));
        }
        let inv = [[sdd / det, -sad / det], [-sad / det, saa / det]];
        let r = [x[0] - mu[0], x[1] - mu[1]];
        let quad = r[0] * (inv[0][0] * r[0] + inv[0][1] * r[1]) + r[1] * (inv[1][0] * r[0] + inv[1][1] * r[1]);
        let cross = [c[2][0], c[2][1]];
        let gain = [
            cross[0] * inv[0][0] + cross[1] * inv[1][0],
            cross[0] * inv[0][1] + cross[1] * inv[1][1],
        ];
        let cond_mean = mu[2] + gain[0] * r[0] + gain[1] * r[1];
        let cond_var = c[2][2] - (gain[0] * cross[0] + gain[1] * cross[1]);
        if !(cond_var > 0.0) {
            return Err(Error::DegenerateConditional(j));
        }
        let w = model.weights[j];
        log_w.push(if w > 0.0 { w.ln() - 0.5 * (quad + det.ln() + 2.0 * LN_2PI) } else { f64::NEG_INFINITY });
        let z = (threshold - cond_mean) / cond_var.sqrt();
        tails.push(0.5 * erfc(z / std::f64::consts::SQRT_2));
    }
    let norm = log_sum_exp(&log_w);
    let prob: f64 = log_w.iter().zip(&tails).map(|(lw, t)| (lw - norm).exp() * t).sum();
    Ok(prob.clamp(0.0, 1.0))
}

/// `-2 loglik + (10K - 1) ln m`.
pub fn bic(model: &GmmModel, points: &[Profile]) -> f64 {
    let params = (10 * model.k - 1) as f64;
    -2.0 * model.log_likelihood(points) + params * (points.len() as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Independent initializations; the best final likelihood wins.
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iters: 200, tol: 1e-6, seed: 0, restarts: 3 }
    }
}

impl EmOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// A fitted model with the log-likelihood recorded before each M-step.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    pub trace: Vec<f64>,
    pub iterations: usize,
}

pub fn fit_em(points: &[Profile], k: usize, options: &EmOptions) -> Result<GmmModel> {
    Ok(fit_em_traced(points, k, options)?.model)
}

pub fn fit_em_traced(points: &[Profile], k: usize, options: &EmOptions) -> Result<EmFit> {
    let need = 10 * k;
    if k == 0 || points.len() < need {
        return Err(Error::InsufficientData { got: points.len(), k, need });
    }
    if points.iter().any(|p| p.as_array().iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidData("non-finite coordinate in training points".into()));
    }
    let data: Vec<Vec3> = points.iter().map(Profile::as_array).collect();
    let mut best: Option<EmFit> = None;
    for restart in 0..options.restarts.max(1) {
        let fit = em_single(&data, k, options, stream_seed(options.seed, restart as u64))?;
        if best.as_ref().is_none_or(|b| fit.model.loglik > b.model.loglik) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("at least one restart");
    best.model.seed = options.seed;
    Ok(best)
}

fn em_single(data: &[Vec3], k: usize, options: &EmOptions, seed: u64) -> Result<EmFit> {
    let mut model = kmeans_pp_init(data, k, seed)?;
    let mut resp = vec![0.0; data.len() * k];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let ll = e_step(&model, data, &mut resp);
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev) / prev.abs().max(f64::MIN_POSITIVE) < options.tol);
        trace.push(ll);
        if converged || iterations >= options.max_iters {
            model.loglik = ll;
            break;
        }
        m_step(&mut model, data, &resp);
        iterations += 1;
    }
    model.seed = seed;
    Ok(EmFit { model, trace, iterations })
}

/// Fills responsibilities row-major and returns the log-likelihood.
fn e_step(model: &GmmModel, data: &[Vec3], resp: &mut [f64]) -> f64 {
    let factors = model.factors();
    let k = model.k;
    let lls: Vec<f64> = resp
        .par_chunks_mut(k)
        .zip(data.par_iter())
        .map(|(row, x)| {
            model.component_log_terms(&factors, x, row);
            let total = log_sum_exp(row);
            for r in row.iter_mut() {
                *r = (*r - total).exp();
            }
            total
        })
        .collect();
    lls.iter().sum()
}

fn m_step(model: &mut GmmModel, data: &[Vec3], resp: &[f64]) {
    let k = model.k;
    let n = data.len() as f64;
    for j in 0..k {
        let mut nk = 0.0;
        let mut mean = [0.0; 3];
        for (i, x) in data.iter().enumerate() {
            let r = resp[i * k + j];
            nk += r;
            for a in 0..3 {
                mean[a] += r * x[a];
            }
        }
        // An empty component keeps its previous shape.
        if nk < 1e-10 {
            model.weights[j] = 0.0;
            continue;
        }
        for m in &mut mean {
            *m /= nk;
        }
        let mut cov = [[0.0; 3]; 3];
        for (i, x) in data.iter().enumerate() {
            let r = resp[i * k + j];
            let dx = sub(x, &mean);
            for a in 0..3 {
                for b in 0..=a {
                    cov[a][b] += r * dx[a] * dx[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..=a {
                cov[a][b] /= nk;
                cov[b][a] = cov[a][b];
            }
            cov[a][a] += COVARIANCE_RIDGE;
        }
        model.weights[j] = nk / n;
        model.means[j] = mean;
        model.covariances[j] = cov;
    }
    let total: f64 = model.weights.iter().sum();
    for w in &mut model.weights {
        *w /= total;
    }
}

/// k-means++ seeding followed by one hard assignment to build initial moments.
fn kmeans_pp_init(data: &[Vec3], k: usize, seed: u64) -> Result<GmmModel> {
    let mut rng = SplitMix64::new(seed);
    let mut centers: Vec<Vec3> = vec![data[rng.next_below(data.len() as u64) as usize]];
    let dist2 = |a: &Vec3, b: &Vec3| {
        let d = sub(a, b);
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    };
    let mut nearest: Vec<f64> = data.iter().map(|x| dist2(x, &centers[0])).collect();
    while centers.len() < k {
        let next = if nearest.iter().any(|&d| d > 0.0) {
            rng.next_categorical(&nearest)
        } else {
            rng.next_below(data.len() as u64) as usize
        };
        let c = data[next];
        for (d, x) in nearest.iter_mut().zip(data) {
            *d = d.min(dist2(x, &c));
        }
        centers.push(c);
    }

    let global = moments(data.iter())?;
    let mut groups: Vec<Vec<Vec3>> = vec![Vec::new(); k];
    for x in data {
        let j = (0..k)
            .min_by(|&a, &b| dist2(x, &centers[a]).total_cmp(&dist2(x, &centers[b])))
            .expect("k >= 1");
        groups[j].push(*x);
    }
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for (j, g) in groups.iter().enumerate() {
        let (mean, cov) = if g.len() >= 4 { moments(g.iter())? } else { (centers[j], global.1) };
        weights.push((g.len().max(1)) as f64);
        means.push(mean);
        covariances.push(cov);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mut model = GmmModel { k, weights, means, covariances, seed, loglik: f64::NAN };
    // Nearly collinear clusters fall back to the pooled covariance.
    for j in 0..k {
        if Cholesky3::new(&model.covariances[j]).is_none() {
            model.covariances[j] = global.1;
        }
    }
    Ok(model)
}

fn moments<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> Result<(Vec3, Mat3)> {
    let count = points.clone().count() as f64;
    let mut mean = [0.0; 3];
    for x in points.clone() {
        for a in 0..3 {
            mean[a] += x[a] / count;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for x in points {
        let dx = sub(x, &mean);
        for a in 0..3 {
            for b in 0..3 {
                cov[a][b] += dx[a] * dx[b] / count;
            }
        }
    }
    for (a, row) in cov.iter_mut().enumerate() {
        row[a] += COVARIANCE_RIDGE;
    }
    if Cholesky3::new(&cov).is_none() {
        return Err(Error::InvalidData("training points are degenerate".into()));
    }
    Ok((mean, cov))
}

fn covariance_from(sd: Vec3, corr: [[f64; 3]; 3]) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            c[a][b] = corr[a][b] * sd[a] * sd[b];
        }
    }
    c
}

/// Built-in three-component stand-in for workplace charging sessions:
/// morning commuters, all-day visitors, and evening arrivals. Longer stays
/// correlate with later departures.
pub fn synthetic_generator() -> GmmModel {
    let commute = covariance_from(
        [1.6, 1.8, 1.2],
        [[1.0, -0.2, 0.0], [-0.2, 1.0, 0.3], [0.0, 0.3, 1.0]],
    );
    let anytime = covariance_from(
        [4.5, 1.8, 1.3],
        [[1.0, 0.0, 0.1], [0.0, 1.0, 0.3], [0.1, 0.3, 1.0]],
    );
    let evening = covariance_from(
        [1.8, 2.5, 1.3],
        [[1.0, -0.2, 0.0], [-0.2, 1.0, 0.35], [0.0, 0.35, 1.0]],
    );
    GmmModel::new(
        vec![0.45, 0.35, 0.20],
        vec![[8.5, 8.5, 0.0], [12.5, 4.5, 0.2], [18.0, 7.0, 0.0]],
        vec![commute, anytime, evening],
    )
    .expect("built-in generator is valid")
}
