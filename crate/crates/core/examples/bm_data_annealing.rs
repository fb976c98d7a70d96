//! Data-annealing SMC² on the Brownian-motion model: one observation per
//! stage, resample-move when the ESS drops, `Nx` adapted at each move.
//!
//! cargo run --release --example bm_data_annealing

use adaptive_smc2::adapt::AdaptPolicy;
use adaptive_smc2::engine::{run_smc2, Flavor, RunConfig};
use adaptive_smc2::models::{simulate_dataset, BrownianMotion, StateSpaceModel};

fn main() {
    let bm = BrownianMotion::new();
    let data = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 100, 7).unwrap();
    let config = RunConfig::new(Flavor::DataAnnealing, 500, 10, 2, AdaptPolicy::default());
    let ens = run_smc2(&bm, &data, &config).unwrap();

    for e in &ens.events {
        println!(
            "t = {:>3}: sigma2_hat {:>8.2}, candidates {:?} -> Nx = {}, R = {}",
            e.d,
            e.sigma2_hat.unwrap_or(f64::NAN),
            e.candidates,
            e.chosen_nx,
            e.r
        );
    }
    let moves = ens.trace.iter().filter(|r| r.r > 0).count();
    println!("{moves} resample-move steps over {} observations, final Nx = {}", data.len(), ens.nx);
    let mean = ens.posterior_mean();
    for (j, name) in bm.spec().param_names.iter().enumerate() {
        println!("{name:>6}: {:.3}", mean[j]);
    }
}
