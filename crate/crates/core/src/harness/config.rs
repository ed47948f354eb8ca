use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::PoolEstimate;

/// Reads a JSON config; a missing path yields the defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n: usize,
    pub d: f64,
    /// Safety threshold; defaults to `1/n`.
    pub eta: Option<f64>,
    /// Explicit grid. When absent: 0 followed by `grid_points - 1` log-spaced
    /// values from `epsilon_min` to `epsilon_max`.
    pub epsilon_grid: Option<Vec<f64>>,
    pub grid_points: usize,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub trials: usize,
    pub seed: u64,
    /// Relative tolerance for hitting each divergence target.
    pub tolerance: f64,
    /// Whitespace- or comma-separated true probabilities; replaces `n` and `d`.
    pub p_file: Option<PathBuf>,
    pub pool_estimate: PoolEstimate,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            d: 10.0,
            eta: None,
            epsilon_grid: None,
            grid_points: 10,
            epsilon_min: 0.1,
            epsilon_max: 150.0,
            trials: 500,
            seed: 0,
            tolerance: 0.01,
            p_file: None,
            pool_estimate: PoolEstimate::default(),
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        let grid = match &self.epsilon_grid {
            Some(g) => g.clone(),
            None => log_grid(self.grid_points, self.epsilon_min, self.epsilon_max)?,
        };
        if grid.is_empty() {
            return Err(Error::Config("epsilon grid is empty".into()));
        }
        if grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("epsilon grid entries must be finite and non-negative".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("epsilon grid must be strictly increasing".into()));
        }
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.p_file.is_none() && !(self.n >= 2 && self.d > 0.0 && self.d < self.n as f64) {
            return Err(Error::Config(format!("need 0 < d < n, got n = {}, d = {}", self.n, self.d)));
        }
        self.grid().map(|_| ())
    }
}

/// `0` followed by `points - 1` geometrically spaced values in `[lo, hi]`.
pub fn log_grid(points: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if points < 2 || !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Config(format!("cannot build a {points}-point grid over [{lo}, {hi}]")));
    }
    let steps = (points - 2).max(1) as f64;
    let mut grid = vec![0.0];
    for i in 0..points - 1 {
        grid.push(if i == points - 2 { hi } else { lo * (hi / lo).powf(i as f64 / steps) });
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Sessions CSV; ignored when `synthetic` is set.
    pub input: Option<PathBuf>,
    pub synthetic: bool,
    /// Training points drawn from the built-in generator.
    pub synthetic_points: usize,
    pub k: usize,
    pub bic_select: bool,
    pub k_max: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    /// Model draws compared against the training data.
    pub marginal_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            input: None,
            synthetic: false,
            synthetic_points: 10_000,
            k: 3,
            bic_select: false,
            k_max: 6,
            seed: 0,
            max_iters: 200,
            tol: 1e-6,
            restarts: 3,
            marginal_samples: 100_000,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input.is_none() && !self.synthetic {
            return Err(Error::Config("need an input sessions file or the synthetic flag".into()));
        }
        if self.k == 0 || (self.bic_select && self.k_max == 0) {
            return Err(Error::Config("component counts must be at least 1".into()));
        }
        if self.marginal_samples == 0 || self.synthetic_points == 0 {
            return Err(Error::Config("sample counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// Fitted model JSON. Without one, `input` is fitted inline, and without
    /// that the built-in generator serves as the model.
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub k: usize,
    pub samples: usize,
    pub eta: Option<f64>,
    pub horizon_hours: usize,
    pub seed: u64,
    pub threshold: f64,
    pub pool_estimate: PoolEstimate,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            model: None,
            input: None,
            k: 3,
            samples: 100_000,
            eta: None,
            horizon_hours: 168,
            seed: 0,
            threshold: crate::v2g::DEFAULT_DEVIATION_THRESHOLD,
            pool_estimate: PoolEstimate::default(),
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.horizon_hours == 0 {
            return Err(Error::Config("samples and horizon must be at least 1".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Config(format!("eta must lie in (0, 1], got {eta}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = SweepConfig::default().grid().unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.1).abs() < 1e-15 && g[9] == 150.0);
        let r = g[2] / g[1];
        assert!(g[2..].windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-9));
    }

    #[test]
    fn rejects_bad_grids() {
        let bad = |g: Vec<f64>| SweepConfig { epsilon_grid: Some(g), ..SweepConfig::default() }.validate();
        assert!(matches!(bad(vec![]), Err(Error::Config(_))));
        assert!(matches!(bad(vec![1.0, 0.5]), Err(Error::Config(_))));
        assert!(matches!(bad(vec![-1.0]), Err(Error::Config(_))));
        assert!(matches!(bad(vec![f64::NAN]), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 10, "bogus": 1}"#).unwrap();
        assert!(matches!(load::<SweepConfig>(Some(&path)), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"n": 50, "trials": 3}"#).unwrap();
        let c: SweepConfig = load(Some(&path)).unwrap();
        assert_eq!((c.n, c.trials, c.d), (50, 3, 10.0));
    }
}
