mod support;

use proptest::prelude::*;

use gtua::advice::{normalize_to_budget, perturb_to_target, pseudo_kl, AdviceVector, NoiseFamily, MAX_NOISE_SCALE};
use gtua::gbs::run_gbs;
use gtua::gmm::{sample, synthetic_generator};
use gtua::la::run_la;
use gtua::metrics::Algorithm;
use gtua::oracle::{sample_instance, Instance, ProbVector, Subset, Transcript, TestSession};
use gtua::scheme::{run_gtua, GtuaConfig};
use gtua::v2g::{replay, ReplayOptions};

fn probs(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|n| prop::collection::vec(0.0f64..=1.0, n))
}

/// Truth and strictly positive advice of the same length, with advice budget
/// equal to its own sum.
fn case() -> impl Strategy<Value = (Vec<f64>, AdviceVector, u64)> {
    (1usize..=64).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..=1.0, n),
            prop::collection::vec(1e-9f64..=1.0, n),
            any::<u64>(),
        )
            .prop_map(|(p, q, seed)| (p, support::self_budget(q), seed))
    })
}

/// Replays `t` on `inst`, asserting no record's outcome already followed
/// from the records before it.
fn assert_no_implied_tests(t: &Transcript, inst: &Instance) {
    let mut replayed = TestSession::new(inst);
    for (k, r) in t.records().iter().enumerate() {
        assert_eq!(replayed.transcript().implied_outcome(&r.subset), None, "record {k} was implied");
        replayed.or_test(&r.subset).unwrap();
    }
}

fn laminar(t: &Transcript) -> bool {
    let sets: Vec<&Subset> = t.records().iter().map(|r| &r.subset).collect();
    sets.iter().enumerate().all(|(i, a)| {
        sets[i + 1..].iter().all(|b| a.is_disjoint(b) || a.is_subset_of(b) || b.is_subset_of(a))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn every_algorithm_recovers_exactly((p, q, seed) in case()) {
        let n = p.len();
        let inst = sample_instance(&ProbVector::new(p).unwrap(), seed).unwrap();
        let cfg = GtuaConfig::for_population(n);
        for algo in Algorithm::ALL {
            let mut s = TestSession::new(&inst);
            let found = algo.run(&mut s, &q, &cfg).unwrap();
            prop_assert_eq!(&found, &inst.malicious());
            prop_assert!(s.transcript().replays_on(&inst));
            assert_no_implied_tests(s.transcript(), &inst);
        }
    }

    #[test]
    fn la_tests_form_a_laminar_family((p, q, seed) in case()) {
        let inst = sample_instance(&ProbVector::new(p).unwrap(), seed).unwrap();
        let mut s = TestSession::new(&inst);
        run_la(&mut s, &Subset::range(0, inst.n()), &q).unwrap();
        prop_assert!(laminar(s.transcript()));
    }

    #[test]
    fn gbs_ignores_advice_values((p, q, seed) in case(), d_hat in 0usize..12) {
        let inst = sample_instance(&ProbVector::new(p).unwrap(), seed).unwrap();
        let n = inst.n();
        let mut a = TestSession::new(&inst);
        run_gbs(&mut a, &Subset::range(0, n), d_hat).unwrap();
        // Same budget, different shape.
        let flat = normalize_to_budget(&vec![1.0; n], q.budget()).unwrap();
        let mut b = TestSession::new(&inst);
        let mut c = TestSession::new(&inst);
        Algorithm::Gbs.run(&mut b, &q, &GtuaConfig::for_population(n)).unwrap();
        Algorithm::Gbs.run(&mut c, &flat, &GtuaConfig::for_population(n)).unwrap();
        prop_assert_eq!(b.transcript(), c.transcript());
        prop_assert_eq!(a.transcript().records().is_empty(), n == 0);
    }

    #[test]
    fn gbs_exact_for_any_estimate(p in probs(1..=80), seed: u64, d_hat in 0usize..100) {
        let inst = sample_instance(&ProbVector::new(p).unwrap(), seed).unwrap();
        let d_hat = d_hat.min(inst.n());
        let mut s = TestSession::new(&inst);
        prop_assert_eq!(run_gbs(&mut s, &Subset::range(0, inst.n()), d_hat).unwrap(), inst.malicious());
    }

    #[test]
    fn scheme_phases_touch_disjoint_pools((p, q, seed) in case(), eta_scale in 1.0f64..50.0) {
        let n = p.len();
        let inst = sample_instance(&ProbVector::new(p).unwrap(), seed).unwrap();
        let cfg = GtuaConfig::with_eta((eta_scale / n as f64).min(1.0));
        let mut s = TestSession::new(&inst);
        let run = run_gtua(&mut s, &q, &cfg).unwrap();
        prop_assert_eq!(run.pool_p.len() + run.pool_c.len(), n);
        prop_assert!(run.pool_p.is_disjoint(&run.pool_c));
        let (la, gbs) = s.transcript().records().split_at(run.la_tests);
        prop_assert!(la.iter().all(|r| r.subset.is_subset_of(&run.pool_p)));
        prop_assert!(gbs.iter().all(|r| r.subset.is_subset_of(&run.pool_c)));
        prop_assert_eq!(run.tests(), s.tests_used());
    }

    #[test]
    fn or_is_a_union_homomorphism(p in probs(2..=40), seed: u64, a_bits: u64, b_bits: u64) {
        let inst = sample_instance(&ProbVector::new(p).unwrap(), seed).unwrap();
        let n = inst.n();
        let pick = |bits: u64| Subset::from_members((0..n).filter(|i| bits >> i & 1 == 1).collect());
        let (a, b) = (pick(a_bits), pick(b_bits));
        prop_assert_eq!(
            inst.any_malicious(a.union(&b).members()),
            inst.any_malicious(a.members()) || inst.any_malicious(b.members())
        );
        let mut s = TestSession::lenient(&inst);
        s.or_test(&a).unwrap();
        s.or_test(&b).unwrap();
        prop_assert_eq!(s.tests_used(), 2);
    }

    #[test]
    fn normalized_advice_keeps_its_budget(raw in prop::collection::vec(0.0f64..=5.0, 1..200), frac in 0.01f64..=1.0) {
        prop_assume!(raw.iter().any(|&r| r > 0.0));
        let positive = raw.iter().filter(|&&r| r > 0.0).count() as f64;
        let d = frac * positive;
        let q = normalize_to_budget(&raw, d).unwrap();
        prop_assert!((q.values().iter().sum::<f64>() - d).abs() <= 1e-9 * d);
        prop_assert!(q.values().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn divergence_of_truth_from_itself_is_zero(p in prop::collection::vec(1e-6f64..=1.0, 1..300)) {
        let pv = ProbVector::new(p.clone()).unwrap();
        let q = AdviceVector::new(p.clone(), pv.mass()).unwrap();
        prop_assert!(pseudo_kl(&pv, &q).unwrap().abs() <= 1e-12 * p.len() as f64);
    }

    #[test]
    fn perturbation_is_deterministic(p in prop::collection::vec(0.001f64..=0.5, 5..100), eps in 0.0f64..20.0, seed: u64) {
        let pv = ProbVector::new(p).unwrap();
        let a = perturb_to_target(&pv, eps, seed, 0.01).unwrap();
        let b = perturb_to_target(&pv, eps, seed, 0.01).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// Probe of the bisection's premise: on these families the divergence grows
/// with the noise scale.
#[test]
fn divergence_grows_with_noise_scale() {
    for (n, rate, seed) in [(1000, 0.01, 0u64), (200, 0.05, 3), (50, 0.2, 9)] {
        let p = ProbVector::uniform(n, rate).unwrap();
        let family = NoiseFamily::new(&p, seed).unwrap();
        let scales: Vec<f64> = (0..=64).map(|i| MAX_NOISE_SCALE * i as f64 / 64.0).collect();
        let kl: Vec<f64> = scales.iter().map(|&s| family.divergence_at(s).unwrap()).collect();
        assert!(kl[0].abs() < 1e-12);
        for w in kl.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{kl:?}");
        }
    }
}

#[test]
fn replay_tests_each_ev_once() {
    let model = synthetic_generator();
    let profiles = sample(&model, 5000, 21);
    let report = replay(&profiles, &model, &ReplayOptions { seed: 4, ..ReplayOptions::default() }).unwrap();
    assert_eq!(report.total_user_hours, profiles.len());
    assert!(report.hours.iter().all(|h| h.detected == h.malicious_present && h.n_users <= h.present));
    assert!(report.total_tests <= report.total_user_hours + report.total_malicious);
}
