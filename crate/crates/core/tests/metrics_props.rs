use proptest::prelude::*;
use regpd::graph::{lazy_metropolis, watts_strogatz};
use regpd::metrics::{
    check_product_sum_inequality, check_tau_inequality, consensus_bound, fit_power_law, lambda_sq_bound, thm2_bound,
    thm2_constant,
};
use regpd::problem::{build_logistic_problem, generate_dataset};

/// Direct evaluation of every prefix sum with explicit products.
fn product_sum_direct(alphas: &[f64], eta: f64) -> f64 {
    let mut worst = 0.0f64;
    for t in 0..alphas.len() {
        let mut s = 0.0;
        for l in 0..=t {
            let prod: f64 = alphas[l + 1..=t].iter().map(|a| 1.0 - a * eta).product();
            s += alphas[l] * eta * prod;
        }
        worst = worst.max(s);
    }
    worst
}

proptest! {
    #[test]
    fn product_sum_inequality_holds(raw in prop::collection::vec(0.0f64..=1.0, 1..60), eta in 0.01f64..10.0) {
        let alphas: Vec<f64> = raw.iter().map(|q| q / eta).collect();
        prop_assert!(check_product_sum_inequality(&alphas, eta).unwrap());
        prop_assert!(product_sum_direct(&alphas, eta) <= 1.0 + 1e-12);
    }

    #[test]
    fn product_sum_rejects_oversized_steps(eta in 0.1f64..10.0, excess in 1e-6f64..1.0) {
        prop_assert!(check_product_sum_inequality(&[(1.0 + excess) / eta], eta).is_err());
    }

    #[test]
    fn tau_inequality_holds(tau in 1usize..80, offset in 0usize..20_000) {
        let t = tau - 1 + offset;
        prop_assert!(check_tau_inequality(tau, t).unwrap());
        let direct: f64 = (t + 1 - tau..t).map(|r| ((t + 1) as f64 / (r + 1) as f64).sqrt()).sum();
        prop_assert!(direct <= (tau as f64).powf(1.5));
    }

    #[test]
    fn power_law_fit_recovers_exponents(exponent in -2.0f64..0.0, scale in 0.1f64..10.0) {
        let ts: Vec<usize> = (0..20).map(|k| 10usize.pow(2) * (k + 1) * 5).collect();
        let values: Vec<f64> = ts.iter().map(|&t| scale * (t as f64).powf(exponent)).collect();
        let fit = fit_power_law(&ts, &values).unwrap();
        prop_assert!((fit.exponent - exponent).abs() <= 1e-9);
        prop_assert!(fit.r2 > 1.0 - 1e-9);
    }
}

#[test]
fn thm2_constant_matches_hand_evaluation() {
    let data = generate_dataset(100, 5, 1).unwrap();
    let p = build_logistic_problem(&data, 0.1, 0.1).unwrap();
    let w = lazy_metropolis(&watts_strogatz(100, 20, 0.02, 7).unwrap());
    let horizon = 10_000usize;
    let c = thm2_constant(&p, &w, 1.0, horizon, 100).unwrap();

    let (n, m, l, r, eta) = (100.0f64, 10.0f64, 1.0f64, 1.0f64, 1.0f64);
    let tf = horizon as f64;
    let log = (tf * (n * tf).sqrt()).ln() / (1.0 - w.sigma2());
    let growth = 1.0 + n * m * m.sqrt() * l * r / eta;
    let expected = 1.0 + 2.5 * m * l * l * r * r + 20.0 * l * l * growth * growth * log * log.sqrt();
    assert!(((c - expected) / expected).abs() < 1e-12, "{c} vs {expected}");

    let bound = thm2_bound(1.0, c, horizon).unwrap();
    assert!((bound - expected * tf.ln() / 99.0).abs() / bound < 1e-12);
    assert!(thm2_bound(1.0, c, 1).is_none());
}

#[test]
fn bound_helpers_match_hand_values() {
    assert_eq!(lambda_sq_bound(100, 10, 1.0, 1.0, 2.0), 250.0);
    // T = 2, n = 4: log factor log(2 sqrt(8)) / (1 - 0.5), growth 1 + 4
    let b = consensus_bound(4, 1, 1.0, 1.0, 1.0, 2, 0.5, 1.0).unwrap();
    let log = (2.0f64 * (8.0f64).sqrt()).ln() / 0.5;
    assert!((b - 5.0 * 5.0 * log.powf(1.5)).abs() < 1e-12);
}
