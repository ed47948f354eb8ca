//! The safety-threshold scheme: trust advice at or above `eta`, run the
//! Laminar Algorithm there, and fall back to generalized binary splitting for
//! everything the advice rates below `eta`.

use serde::{Deserialize, Serialize};

use crate::advice::AdviceVector;
use crate::error::{Error, Result};
use crate::gbs::run_gbs;
use crate::la::run_la;
use crate::oracle::{Subset, TestSession};

/// How the binary-splitting pool's defective estimate is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolEstimate {
    /// `max(1, ceil(budget) - found by the advice-driven phase)`.
    #[default]
    ResidualBudget,
    /// `max(1, ceil(sum of advice over the pool))`.
    AdviceMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtuaConfig {
    pub eta: f64,
    #[serde(default)]
    pub pool_estimate: PoolEstimate,
}

impl GtuaConfig {
    /// `eta = 1/n`.
    pub fn for_population(n: usize) -> Self {
        Self { eta: 1.0 / n as f64, pool_estimate: PoolEstimate::default() }
    }

    pub fn with_eta(eta: f64) -> Self {
        Self { eta, pool_estimate: PoolEstimate::default() }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let floor = 1.0 / n as f64;
        if !(self.eta >= floor * (1.0 - 1e-12)) {
            return Err(Error::PreconditionViolated(format!(
                "safety threshold {} is below 1/n = {floor}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Splits the population into trusted (`q_i >= eta`) and distrusted items.
pub fn partition_pools(q: &AdviceVector, eta: f64) -> (Subset, Subset) {
    let (trusted, distrusted): (Vec<usize>, Vec<usize>) = (0..q.len()).partition(|&i| q.get(i) >= eta);
    (Subset::from_members(trusted), Subset::from_members(distrusted))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtuaRun {
    pub detected: Subset,
    pub pool_p: Subset,
    pub pool_c: Subset,
    pub la_tests: usize,
    pub gbs_tests: usize,
    /// Estimate handed to binary splitting; zero when its pool is empty.
    pub gbs_estimate: usize,
}

impl GtuaRun {
    pub fn tests(&self) -> usize {
        self.la_tests + self.gbs_tests
    }
}

/// Runs the full scheme over every item covered by `q`.
pub fn run_gtua(session: &mut TestSession<'_>, q: &AdviceVector, config: &GtuaConfig) -> Result<GtuaRun> {
    if session.instance().n() != q.len() {
        return Err(Error::LengthMismatch { left: session.instance().n(), right: q.len() });
    }
    config.validate(q.len())?;
    let (pool_p, pool_c) = partition_pools(q, config.eta);

    let start = session.tests_used();
    let from_la = if pool_p.is_empty() { Subset::empty() } else { run_la(session, &pool_p, q)? };
    let la_tests = session.tests_used() - start;

    let (from_gbs, gbs_estimate) = if pool_c.is_empty() {
        (Subset::empty(), 0)
    } else {
        let estimate = match config.pool_estimate {
            PoolEstimate::AdviceMass => q.mass_over(pool_c.members()).ceil() as usize,
            PoolEstimate::ResidualBudget => {
                (q.budget().ceil() as usize).saturating_sub(from_la.len())
            }
        }
        .max(1);
        (run_gbs(session, &pool_c, estimate)?, estimate)
    };
    let gbs_tests = session.tests_used() - start - la_tests;

    Ok(GtuaRun {
        detected: from_la.union(&from_gbs),
        pool_p,
        pool_c,
        la_tests,
        gbs_tests,
        gbs_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advice::normalize_to_budget;
    use crate::oracle::{sample_instance, ProbVector};

    #[test]
    fn partition_examples() {
        let q = AdviceVector::new(vec![0.5, 0.005, 0.02], 0.525).unwrap();
        let (p, c) = partition_pools(&q, 0.01);
        assert_eq!(p, Subset::from_members(vec![0, 2]));
        assert_eq!(c, Subset::from_members(vec![1]));
        let (p, c) = partition_pools(&q, 0.001);
        assert_eq!((p.len(), c.len()), (3, 0));
        let (p, c) = partition_pools(&q, 0.9);
        assert_eq!((p.len(), c.len()), (0, 3));
    }

    #[test]
    fn eta_below_one_over_n_rejected() {
        let p = ProbVector::uniform(10, 0.1).unwrap();
        let inst = sample_instance(&p, 1).unwrap();
        let q = normalize_to_budget(p.values(), 1.0).unwrap();
        let mut s = TestSession::new(&inst);
        assert!(run_gtua(&mut s, &q, &GtuaConfig::with_eta(0.01)).is_err());
    }

    #[test]
    fn reduces_to_la_when_nothing_is_distrusted() {
        let p = ProbVector::uniform(300, 0.03).unwrap();
        let q = normalize_to_budget(p.values(), p.mass()).unwrap();
        for seed in 0..20 {
            let inst = sample_instance(&p, seed).unwrap();
            let mut a = TestSession::new(&inst);
            let run = run_gtua(&mut a, &q, &GtuaConfig::for_population(300)).unwrap();
            assert!(run.pool_c.is_empty());
            let mut b = TestSession::new(&inst);
            run_la(&mut b, &Subset::range(0, 300), &q).unwrap();
            assert_eq!(a.transcript(), b.transcript());
        }
    }

    #[test]
    fn reduces_to_gbs_when_everything_is_distrusted() {
        let p = ProbVector::uniform(120, 0.05).unwrap();
        let q = normalize_to_budget(p.values(), p.mass()).unwrap();
        for seed in 0..20 {
            let inst = sample_instance(&p, seed).unwrap();
            let mut a = TestSession::new(&inst);
            let run = run_gtua(&mut a, &q, &GtuaConfig::with_eta(0.5)).unwrap();
            assert!(run.pool_p.is_empty());
            let mut b = TestSession::new(&inst);
            run_gbs(&mut b, &Subset::range(0, 120), run.gbs_estimate).unwrap();
            assert_eq!(a.transcript(), b.transcript());
            assert_eq!(run.detected, inst.malicious());
        }
    }
}
