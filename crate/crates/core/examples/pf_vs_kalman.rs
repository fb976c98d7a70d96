//! Bootstrap particle filter against the exact Kalman likelihood on the
//! Brownian-motion model: the likelihood estimate is unbiased and the
//! variance of its log falls roughly like 1 / Nx.
//!
//! cargo run --release --example pf_vs_kalman

use adaptive_smc2::filter::run_filter;
use adaptive_smc2::harness::kalman_loglik;
use adaptive_smc2::math::mean_var;
use adaptive_smc2::models::{simulate_dataset, BrownianMotion};
use adaptive_smc2::rng::{Purpose, RngStreams};

fn main() {
    let theta = [1.0, 1.2, 1.5, 1.0];
    let bm = BrownianMotion::new();
    let data = simulate_dataset(&bm, &theta, 50, 1).unwrap();
    let exact = kalman_loglik(&theta, &data, data.len());
    println!("exact log-likelihood {exact:.4}");
    println!("{:>6} {:>12} {:>12} {:>14}", "Nx", "mean ln p̂", "var ln p̂", "mean p̂ / p");
    let streams = RngStreams::new(3);
    for (i, nx) in [10, 25, 50, 100, 200, 400].into_iter().enumerate() {
        let lls: Vec<f64> = (0..2000)
            .map(|r| run_filter(&bm, &theta, &data, data.len(), nx, &mut streams.stream(Purpose::Extend, i as u64, r)).log_lik)
            .collect();
        let (m, v) = mean_var(&lls);
        let ratio = lls.iter().map(|l| (l - exact).exp()).sum::<f64>() / lls.len() as f64;
        println!("{nx:>6} {m:>12.4} {v:>12.4} {ratio:>14.4}");
    }
}
