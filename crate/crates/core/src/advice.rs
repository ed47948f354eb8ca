//! Distributional advice: pseudo-KL divergence, budget normalization, and
//! synthetic perturbations that land on a requested divergence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{ItemId, ProbVector};
use crate::rng::SplitMix64;

/// Smallest advice value; zero entries are lifted to this.
pub const ADVICE_FLOOR: f64 = 1e-12;

/// Relative budget tolerance carried by every [`AdviceVector`].
pub const BUDGET_RTOL: f64 = 1e-9;

/// Predicted malicious probabilities, each in `(0, 1]`, summing to `budget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceVector {
    values: Vec<f64>,
    budget: f64,
}

impl AdviceVector {
    pub fn new(values: Vec<f64>, budget: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegenerateAdvice("empty advice".into()));
        }
        if let Some(i) = values.iter().position(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::DegenerateAdvice(format!("entry {i} = {} not in (0, 1]", values[i])));
        }
        let sum: f64 = values.iter().sum();
        if (sum - budget).abs() > BUDGET_RTOL * budget.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateAdvice(format!("sum {sum} differs from budget {budget}")));
        }
        Ok(Self { values, budget })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: ItemId) -> f64 {
        self.values[i]
    }

    /// Advice mass over a subset of items.
    pub fn mass_over(&self, items: &[ItemId]) -> f64 {
        items.iter().map(|&i| self.values[i]).sum()
    }
}

/// `sum_i p_i ln(p_i / q_i)` in nats, with `0 ln(0/q) = 0`.
pub fn pseudo_kl(p: &ProbVector, q: &AdviceVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    pseudo_kl_terms(p.values(), q.values(), 0..p.len())
}

/// Pseudo-KL restricted to `items`.
pub fn pseudo_kl_over(p: &ProbVector, q: &AdviceVector, items: &[ItemId]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    pseudo_kl_terms(p.values(), q.values(), items.iter().copied())
}

fn pseudo_kl_terms(p: &[f64], q: &[f64], items: impl Iterator<Item = usize>) -> Result<f64> {
    let mut total = 0.0;
    for i in items {
        let pi = p[i];
        if pi == 0.0 {
            continue;
        }
        if q[i] <= 0.0 {
            return Err(Error::DivergenceUndefined { index: i });
        }
        total += pi * (pi / q[i]).ln();
    }
    Ok(total)
}

/// Scales `raw` proportionally so the entries sum to `d`, with every entry
/// confined to `[ADVICE_FLOOR, 1]`.
///
/// The output is `clamp(c * raw_i, ADVICE_FLOOR, 1)` for the unique level of
/// `c` that meets the budget, so mass shaved off clamped entries is spread
/// proportionally over the rest. Zero entries sit at the floor.
pub fn normalize_to_budget(raw: &[f64], d: f64) -> Result<AdviceVector> {
    let n = raw.len();
    if n == 0 {
        return Err(Error::DegenerateAdvice("empty advice".into()));
    }
    if let Some(i) = raw.iter().position(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::DegenerateAdvice(format!("raw entry {i} = {} is not a finite non-negative", raw[i])));
    }
    if !raw.iter().any(|&r| r > 0.0) {
        return Err(Error::DegenerateAdvice("all raw advice is zero".into()));
    }
    if !(d > 0.0 && d <= n as f64) {
        return Err(Error::DegenerateAdvice(format!("budget {d} outside (0, {n}]")));
    }

    // f(c) = sum clamp(c r_i, floor, 1) is piecewise linear and non-decreasing
    // in c. Binary-search the breakpoints for the segment containing d, then
    // solve on that segment with its active set recomputed from scratch.
    let fill = |c: f64| -> f64 { raw.iter().map(|&r| (c * r).clamp(ADVICE_FLOOR, 1.0)).sum() };
    let mut breaks: Vec<f64> = raw
        .iter()
        .filter(|&&r| r > 0.0)
        .flat_map(|&r| [ADVICE_FLOOR / r, 1.0 / r])
        .filter(|c| c.is_finite())
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    if n as f64 * ADVICE_FLOOR >= d {
        return Err(Error::DegenerateAdvice(format!("budget {d} below the advice floor")));
    }
    let top = fill(*breaks.last().expect("some positive entry"));
    if top < d * (1.0 - BUDGET_RTOL) {
        return Err(Error::DegenerateAdvice(format!("budget {d} exceeds the attainable mass {top}")));
    }
    // First breakpoint where the fill reaches d.
    let k = breaks.partition_point(|&c| fill(c) < d);
    let c = if k == breaks.len() {
        breaks[k - 1]
    } else if k == 0 {
        breaks[0]
    } else {
        let (lo, hi) = (breaks[k - 1], breaks[k]);
        let mid = 0.5 * (lo + hi);
        let (mut constant, mut slope) = (0.0, 0.0);
        for &r in raw {
            let v = mid * r;
            if v <= ADVICE_FLOOR {
                constant += ADVICE_FLOOR;
            } else if v >= 1.0 {
                constant += 1.0;
            } else {
                slope += r;
            }
        }
        if slope > 0.0 {
            ((d - constant) / slope).clamp(lo, hi)
        } else {
            hi
        }
    };

    let values: Vec<f64> = raw.iter().map(|&r| (c * r).clamp(ADVICE_FLOOR, 1.0)).collect();
    AdviceVector::new(values, d)
}

/// Advice with the scale that produced it and the divergence it realizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedAdvice {
    pub advice: AdviceVector,
    pub scale: f64,
    pub realized: f64,
    /// The target exceeded the largest divergence reachable for this seed.
    pub saturated: bool,
}

/// Upper end of the multiplicative-noise scale searched by [`perturb_to_target`].
pub const MAX_NOISE_SCALE: f64 = 64.0;

/// Log-normal multiplicative noise on `p` at a given scale: `q_i ∝ p_i exp(s g_i)`
/// with `g_i` standard normals from `seed`, then budget-normalized to `sum p`.
#[derive(Debug, Clone)]
pub struct NoiseFamily<'a> {
    p: &'a ProbVector,
    log_p: Vec<f64>,
    noise: Vec<f64>,
    budget: f64,
}

impl<'a> NoiseFamily<'a> {
    pub fn new(p: &'a ProbVector, seed: u64) -> Result<Self> {
        let budget = p.mass();
        if !(budget > 0.0) {
            return Err(Error::DegenerateAdvice("probability vector has zero mass".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let noise = (0..p.len()).map(|_| rng.next_normal()).collect();
        let log_p = p.values().iter().map(|&v| v.ln()).collect();
        Ok(Self { p, log_p, noise, budget })
    }

    pub fn advice_at(&self, scale: f64) -> Result<AdviceVector> {
        if scale == 0.0 {
            return normalize_to_budget(self.p.values(), self.budget);
        }
        let logs: Vec<f64> = self.log_p.iter().zip(&self.noise).map(|(lp, g)| lp + scale * g).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
        normalize_to_budget(&raw, self.budget)
    }

    pub fn divergence_at(&self, scale: f64) -> Result<f64> {
        pseudo_kl(self.p, &self.advice_at(scale)?)
    }
}

/// Perturbs `p` until its pseudo-KL from the result is within `tol * epsilon`
/// of `epsilon`, bisecting the noise scale over `[0, MAX_NOISE_SCALE]`.
pub fn perturb_to_target(p: &ProbVector, epsilon: f64, seed: u64, tol: f64) -> Result<PerturbedAdvice> {
    if !(tol > 0.0) {
        return Err(Error::InvalidTolerance(tol));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::DegenerateAdvice(format!("divergence target {epsilon} is negative")));
    }
    let family = NoiseFamily::new(p, seed)?;
    if epsilon == 0.0 {
        let advice = family.advice_at(0.0)?;
        let realized = pseudo_kl(p, &advice)?;
        return Ok(PerturbedAdvice { advice, scale: 0.0, realized, saturated: false });
    }

    let accept = tol * epsilon;
    let top = family.divergence_at(MAX_NOISE_SCALE)?;
    if top < epsilon - accept {
        let advice = family.advice_at(MAX_NOISE_SCALE)?;
        return Ok(PerturbedAdvice { advice, scale: MAX_NOISE_SCALE, realized: top, saturated: true });
    }

    // Invariant: divergence(lo) < epsilon <= divergence(hi).
    let (mut lo, mut hi) = (0.0, MAX_NOISE_SCALE);
    let mut best = (MAX_NOISE_SCALE, top);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let realized = family.divergence_at(mid)?;
        if (realized - epsilon).abs() < (best.1 - epsilon).abs() {
            best = (mid, realized);
        }
        if (realized - epsilon).abs() <= accept {
            break;
        }
        if realized < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let (scale, realized) = best;
    Ok(PerturbedAdvice { advice: family.advice_at(scale)?, scale, realized, saturated: false })
}
