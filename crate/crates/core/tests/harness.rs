use rayon::prelude::*;

use gtua::gmm::{synthetic_generator, EmOptions};
use gtua::harness::config::ReplayConfig;
use gtua::harness::fit::select_by_bic;
use gtua::harness::replay::run_replay;

#[test]
fn bic_recovers_three_components() {
    let generator = synthetic_generator();
    let picks: Vec<usize> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let points = generator.sample_raw(5000, seed);
            select_by_bic(&points, 5, &EmOptions::with_seed(seed)).unwrap().0.k
        })
        .collect();
    let hits = picks.iter().filter(|&&k| k == 3).count();
    assert!(hits >= 18, "selected K per seed: {picks:?}");
}

#[test]
fn hourly_ratios_are_stable_across_seeds() {
    let reports: Vec<_> = (0..5u64)
        .into_par_iter()
        .map(|seed| run_replay(&ReplayConfig { seed, ..ReplayConfig::default() }).unwrap().0)
        .collect();
    for hour in 0..reports[0].by_hour_of_day.len() {
        let r: Vec<f64> = reports.iter().map(|rep| rep.by_hour_of_day[hour].ratio).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64;
        assert!(var < 0.02, "hour {hour}: ratios {r:?}");
    }
}
