use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wpir::optimizer::maxl_optimal;
use wpir::{
    empirical_leakage, enumerate_key_space, expand_reduced, run_all, run_trials, sample_key,
    uniform_coded, uniform_tsc, Allocation, MessageStore, Metric, Query, RandomKey, SystemParams,
};

fn setup(n: usize, k: usize) -> (SystemParams, MessageStore) {
    let p = SystemParams::homogeneous(n, k).unwrap();
    let store = MessageStore::random(&p, &mut ChaCha8Rng::seed_from_u64(5));
    (p, store)
}

#[test]
fn point_mass_always_samples_its_key() {
    let (p, _) = setup(3, 2);
    let key = enumerate_key_space(&p).unwrap()[7].clone();
    let a = Allocation::point_mass(p, key.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        assert_eq!(sample_key(&a, 2, &mut rng).unwrap(), key);
    }
}

#[test]
fn uniform_tsc_keys_are_uniform() {
    let (p, _) = setup(3, 2);
    let a = uniform_coded(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = 100_000;
    let mut freq: BTreeMap<RandomKey, u64> = BTreeMap::new();
    for _ in 0..draws {
        *freq
            .entry(sample_key(&a, 1, &mut rng).unwrap())
            .or_insert(0) += 1;
    }
    assert_eq!(freq.len(), 18);
    let q = 1.0 / 18.0;
    let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
    for c in freq.values() {
        assert!((*c as f64 - draws as f64 * q).abs() <= 5.0 * sigma);
    }
}

#[test]
fn fixed_seed_gives_identical_keys() {
    let (p, _) = setup(3, 2);
    let a = expand_reduced(&uniform_tsc(&p), &p).unwrap();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..200)
            .map(|_| sample_key(&a, 2, &mut rng).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn uniform_tsc_cost_is_four_thirds() {
    let (p, store) = setup(3, 2);
    let a = expand_reduced(&uniform_tsc(&p), &p).unwrap();
    let r = run_all(&a, &store, 100_000, 11).unwrap();
    assert_eq!(r.decode_failures, 0);
    assert!(
        (r.empirical_d - 4.0 / 3.0).abs() <= 3.0 * r.std_err,
        "{} ± {}",
        r.empirical_d,
        r.std_err
    );
    for server in 1..=3 {
        for k in 1..=2 {
            let total: u64 = r
                .query_counts
                .iter()
                .filter(|c| c.server == server && c.k == k)
                .flat_map(|c| c.counts.values())
                .sum();
            assert_eq!(total, 100_000);
        }
    }
}

#[test]
fn direct_download_costs_exactly_one() {
    let (p, store) = setup(3, 2);
    let a = Allocation::point_mass(p.clone(), RandomKey::direct(1)).unwrap();
    let r = run_all(&a, &store, 1_000, 3).unwrap();
    assert_eq!(r.empirical_d, 1.0);
    assert_eq!(r.std_err, 0.0);
    assert_eq!(r.count(1, 2, &Query::Escape(2)), 1_000);
    assert_eq!(r.count(2, 1, &Query::Vector(vec![0, 0])), 1_000);
    assert!(
        (empirical_leakage(&r, Metric::MaxL, p.gamma()).unwrap() - (2.0 + 2.0) / 3.0).abs() < 1e-15
    );
    assert!((empirical_leakage(&r, Metric::MI, p.gamma()).unwrap() - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn maxl_optimal_cost_matches_target() {
    let (p, store) = setup(3, 2);
    let (a, _) = maxl_optimal(&p, 7.0 / 6.0).unwrap();
    let r = run_all(&a, &store, 100_000, 4).unwrap();
    assert!(
        (r.empirical_d - 7.0 / 6.0).abs() <= 3.0 * r.std_err,
        "{} ± {}",
        r.empirical_d,
        r.std_err
    );
}

#[test]
fn reports_are_reproducible_and_split_independent() {
    let (p, store) = setup(3, 3);
    let a = expand_reduced(&uniform_tsc(&p), &p).unwrap();
    let a1 = run_trials(&a, &store, 2, 50_000, 8).unwrap();
    let a2 = run_trials(&a, &store, 2, 50_000, 8).unwrap();
    assert_eq!(a1, a2);
    assert_eq!(a1.to_json(), a2.to_json());
    // The first 20000 trials of a longer run are the same draws as a shorter run.
    let short = run_trials(&a, &store, 2, 20_000, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    rng.set_stream(2);
    let direct: u64 = (0..20_000)
        .map(|_| {
            let key = sample_key(&a, 2, &mut rng).unwrap();
            if key.is_direct_pattern() {
                1
            } else {
                0
            }
        })
        .sum();
    let zero_count = short.count(1, 2, &Query::Vector(vec![0, 0, 0]))
        + short.count(2, 2, &Query::Vector(vec![0, 0, 0]))
        + short.count(3, 2, &Query::Vector(vec![0, 0, 0]));
    assert_eq!(direct, zero_count);
}

#[test]
fn empirical_query_distribution_converges() {
    let (p, store) = setup(3, 2);
    let (a, _) = maxl_optimal(&p, 7.0 / 6.0).unwrap();
    let r = run_all(&a, &store, 1_000_000, 6).unwrap();
    for server in 1..=3 {
        let exact = wpir::query_distribution(&a, server).unwrap();
        let emp = r.empirical_distribution(server).unwrap();
        for k in 1..=2 {
            let mut qs: Vec<&Query> = exact.per_message[k - 1]
                .keys()
                .chain(emp.per_message[k - 1].keys())
                .collect();
            qs.sort();
            qs.dedup();
            let tv: f64 = qs
                .iter()
                .map(|q| (exact.prob(k, q) - emp.prob(k, q)).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv <= 0.01, "server {server} k {k}: {tv}");
        }
    }
}

#[test]
fn plug_in_leakage_near_analytic() {
    let (p, store) = setup(3, 2);
    let a = expand_reduced(&uniform_tsc(&p), &p).unwrap();
    let r = run_all(&a, &store, 1_000_000, 12).unwrap();
    let rho = empirical_leakage(&r, Metric::MaxL, p.gamma()).unwrap();
    assert!((rho - p.gamma_sum()).abs() <= 0.01, "{rho}");
    let (a, exact) = maxl_optimal(&p, 7.0 / 6.0).unwrap();
    let r = run_all(&a, &store, 1_000_000, 13).unwrap();
    let rho = empirical_leakage(&r, Metric::MaxL, p.gamma()).unwrap();
    assert!((rho - exact).abs() <= 0.01, "{rho} vs {exact}");
}

#[test]
fn leakage_needs_every_message() {
    let (p, store) = setup(3, 2);
    let a = expand_reduced(&uniform_tsc(&p), &p).unwrap();
    let r = run_trials(&a, &store, 1, 100, 0).unwrap();
    assert!(empirical_leakage(&r, Metric::MaxL, p.gamma()).is_err());
}

#[test]
fn mismatched_store_is_rejected() {
    let (p, _) = setup(3, 2);
    let (_, other) = setup(3, 3);
    let a = expand_reduced(&uniform_tsc(&p), &p).unwrap();
    assert!(run_all(&a, &other, 10, 0).is_err());
}
