//! The three ways of exchanging state clouds after `Nx` changes, with
//! RESCALE-VAR choosing `Nx`. REPLACE keeps the parameter weights, REWEIGHT
//! multiplies them by likelihood-estimate ratios, REINIT restarts the
//! tempering from a fitted Gaussian mixture.
//!
//! cargo run --release --example stage3_comparison

use adaptive_smc2::adapt::{AdaptPolicy, Stage2, Stage3};
use adaptive_smc2::engine::{run_smc2, Flavor, RunConfig};
use adaptive_smc2::harness::{mse, reference_posterior_mean, ReferenceConfig, ReferenceMethod};
use adaptive_smc2::models::{simulate_dataset, BrownianMotion};

fn main() {
    let bm = BrownianMotion::new();
    let data = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 100, 7).unwrap();
    let reference =
        reference_posterior_mean(&bm, &data, &ReferenceConfig::new(ReferenceMethod::ExactMcmc, 100_000, 1)).unwrap();

    println!("{:<10} {:>8} {:>9} {:>12} {:>10}", "stage 3", "final Nx", "restarts", "tll", "mse");
    for stage3 in [Stage3::Replace, Stage3::Reweight, Stage3::Reinit] {
        let mut policy = AdaptPolicy::new(Stage2::RescaleVar, stage3);
        policy.nx_max = 1200;
        let ens = run_smc2(&bm, &data, &RunConfig::new(Flavor::DensityTempering, 300, 10, 4, policy)).unwrap();
        let err = mse(&ens.unconstrained_mean(), &reference.mean_unconstrained);
        println!("{:<10} {:>8} {:>9} {:>12} {:>10.2e}", stage3.to_string(), ens.nx, ens.restarts, ens.tll, err);
    }
}
