#![allow(dead_code)]

use std::collections::HashMap;

use gtua::advice::AdviceVector;
use gtua::oracle::{Instance, ProbVector, Subset, TestSession};

/// Probability of configuration `mask` (bit i set = item i malicious).
pub fn config_weight(p: &[f64], mask: usize) -> f64 {
    p.iter()
        .enumerate()
        .map(|(i, &pi)| if mask >> i & 1 == 1 { pi } else { 1.0 - pi })
        .product()
}

/// Minimum expected number of OR tests over all adaptive strategies that
/// identify the configuration, for `n <= 4`. Configurations with zero weight
/// are dropped. States are sets of still-consistent configurations.
pub fn optimal_expected_tests(p: &[f64]) -> f64 {
    let n = p.len();
    assert!(n <= 4);
    let configs: Vec<(usize, f64)> = (0..1usize << n)
        .map(|m| (m, config_weight(p, m)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let full: u32 = if configs.len() == 32 { u32::MAX } else { (1u32 << configs.len()) - 1 };
    let mut memo = HashMap::new();
    best_cost(full, &configs, n, &mut memo)
}

/// Weighted cost `sum_{x in state} w(x) * depth(x)` of the best subtree.
fn best_cost(state: u32, configs: &[(usize, f64)], n: usize, memo: &mut HashMap<u32, f64>) -> f64 {
    if state.count_ones() <= 1 {
        return 0.0;
    }
    if let Some(&c) = memo.get(&state) {
        return c;
    }
    let members: Vec<usize> = (0..configs.len()).filter(|&j| state >> j & 1 == 1).collect();
    let weight: f64 = members.iter().map(|&j| configs[j].1).sum();
    let mut best = f64::INFINITY;
    for test in 1..(1usize << n) {
        let mut pos = 0u32;
        for &j in &members {
            if configs[j].0 & test != 0 {
                pos |= 1 << j;
            }
        }
        let neg = state & !pos;
        if pos == 0 || neg == 0 {
            continue;
        }
        let cost = weight + best_cost(pos, configs, n, memo) + best_cost(neg, configs, n, memo);
        best = best.min(cost);
    }
    memo.insert(state, best);
    best
}

/// Exact expected tests of `run` under `p`, by enumerating every
/// configuration. Panics if any configuration is misidentified.
pub fn exact_expected_tests(
    p: &[f64],
    run: impl Fn(&mut TestSession<'_>) -> gtua::Result<Subset>,
) -> f64 {
    let n = p.len();
    let pv = ProbVector::new(p.to_vec()).unwrap();
    let mut total = 0.0;
    for mask in 0..1usize << n {
        let w = config_weight(p, mask);
        if w == 0.0 {
            continue;
        }
        let x: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let inst = Instance::from_truth(x, pv.clone()).unwrap();
        let mut s = TestSession::new(&inst);
        let found = run(&mut s).unwrap();
        assert_eq!(found, inst.malicious(), "p = {p:?}, mask = {mask:b}");
        total += w * s.tests_used() as f64;
    }
    total
}

/// Entropy of independent Bernoulli variables in bits.
pub fn entropy_bits(p: &[f64]) -> f64 {
    let h = |x: f64| if x <= 0.0 || x >= 1.0 { 0.0 } else { -x * x.log2() };
    p.iter().map(|&x| h(x) + h(1.0 - x)).sum()
}

/// Advice whose budget is its own sum.
pub fn self_budget(values: Vec<f64>) -> AdviceVector {
    let total = values.iter().sum();
    AdviceVector::new(values, total).unwrap()
}

/// Log density of a 3-D Gaussian via the explicit cofactor inverse.
pub fn gaussian3_log_pdf(x: [f64; 3], mean: [f64; 3], c: [[f64; 3]; 3]) -> f64 {
    let det = c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1]) - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
        + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (c[r0][c0] * c[r1][c1] - c[r0][c1] * c[r1][c0]) / det;
        }
    }
    let r = [x[0] - mean[0], x[1] - mean[1], x[2] - mean[2]];
    let mut quad = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            quad += r[i] * inv[i][j] * r[j];
        }
    }
    -0.5 * (quad + det.ln() + 3.0 * (2.0 * std::f64::consts::PI).ln())
}

pub fn mixture_log_pdf(x: [f64; 3], weights: &[f64], means: &[[f64; 3]], covs: &[[[f64; 3]; 3]]) -> f64 {
    let density: f64 = (0..weights.len())
        .map(|j| weights[j] * gaussian3_log_pdf(x, means[j], covs[j]).exp())
        .sum();
    density.ln()
}

/// KS statistic by evaluating both empirical CDFs at every sample point.
pub fn ks_by_search(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let cdf = |s: &[f64], x: f64| s.partition_point(|&v| v <= x) as f64 / s.len() as f64;
    sa.iter()
        .chain(sb.iter())
        .map(|&x| (cdf(&sa, x) - cdf(&sb, x)).abs())
        .fold(0.0, f64::max)
}
