//! Statistical checks of the bootstrap particle filter against the exact
//! Kalman likelihood of the Brownian-motion model.

use adaptive_smc2::filter::{ess, multinomial_resample, run_filter};
use adaptive_smc2::harness::kalman_loglik;
use adaptive_smc2::math::mean_var;
use adaptive_smc2::models::{simulate_dataset, BrownianMotion};
use adaptive_smc2::rng::{Purpose, RngStreams};

const TRUTH: [f64; 4] = [1.0, 1.2, 1.5, 1.0];

fn log_estimates(t: usize, nx: usize, reps: u64, seed: u64) -> (Vec<f64>, f64) {
    let bm = BrownianMotion::new();
    let data = simulate_dataset(&bm, &TRUTH, t, 5).unwrap();
    let streams = RngStreams::new(seed);
    let lls = (0..reps)
        .map(|i| run_filter(&bm, &TRUTH, &data, t, nx, &mut streams.stream(Purpose::Extend, 0, i)).log_lik)
        .collect();
    (lls, kalman_loglik(&TRUTH, &data, t))
}

#[test]
fn likelihood_estimate_is_unbiased() {
    let (lls, exact) = log_estimates(20, 50, 4000, 1);
    // Ratios to the exact likelihood have mean one.
    let ratios: Vec<f64> = lls.iter().map(|l| (l - exact).exp()).collect();
    let (m, v) = mean_var(&ratios);
    let se = (v / ratios.len() as f64).sqrt();
    assert!((m - 1.0).abs() < 3.0 * se, "mean ratio {m}, se {se}");
}

#[test]
fn log_estimate_is_biased_downwards() {
    // Jensen: E[ln p̂] < ln p, by about half the variance.
    let (lls, exact) = log_estimates(20, 50, 2000, 2);
    let (m, v) = mean_var(&lls);
    assert!(m < exact);
    assert!((exact - m - v / 2.0).abs() < 0.5 * v + 0.05, "gap {} vs half variance {}", exact - m, v / 2.0);
}

#[test]
fn variance_shrinks_like_one_over_nx() {
    let (a, _) = log_estimates(50, 50, 600, 3);
    let (b, _) = log_estimates(50, 100, 600, 4);
    let ratio = mean_var(&a).1 / mean_var(&b).1;
    assert!((1.25..=3.2).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn large_cloud_concentrates_on_exact_value() {
    let (lls, exact) = log_estimates(20, 10_000, 20, 6);
    let (m, v) = mean_var(&lls);
    assert!((m - exact).abs() < 0.05, "{m} vs {exact}");
    assert!(v < 0.01);
}

#[test]
fn ess_examples() {
    assert!((ess(&[0.25; 4]) - 4.0).abs() < 1e-12);
    assert!((ess(&[1.0, 0.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
    assert!((ess(&[0.5, 0.5, 0.0, 0.0]) - 2.0).abs() < 1e-12);
}

#[test]
fn multinomial_frequencies_match_weights() {
    let w = [0.1, 0.2, 0.3, 0.4];
    let n = 100_000;
    let mut rng = RngStreams::new(8).stream(Purpose::Resample, 0, 0);
    let mut counts = [0f64; 4];
    for i in multinomial_resample(&w, n, &mut rng) {
        counts[i] += 1.0;
    }
    let chi2: f64 = counts.iter().zip(w).map(|(c, p)| (c - p * n as f64).powi(2) / (p * n as f64)).sum();
    // 0.999 quantile of chi-square with 3 degrees of freedom.
    assert!(chi2 < 16.266, "chi2 = {chi2}");
}
