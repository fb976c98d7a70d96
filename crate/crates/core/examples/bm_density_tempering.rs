//! Density-tempered SMC² on the Brownian-motion model with NOVEL-ESJD and
//! REPLACE, starting from 10 state particles.
//!
//! cargo run --release --example bm_density_tempering

use adaptive_smc2::adapt::AdaptPolicy;
use adaptive_smc2::engine::{run_smc2, Flavor, RunConfig};
use adaptive_smc2::models::{simulate_dataset, BrownianMotion, StateSpaceModel};

fn main() {
    let bm = BrownianMotion::new();
    let data = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 100, 7).unwrap();
    let policy = AdaptPolicy { nx_max: 1200, ..AdaptPolicy::default() };
    let config = RunConfig::new(Flavor::DensityTempering, 500, 10, 1, policy);
    let ens = run_smc2(&bm, &data, &config).unwrap();

    println!("{:>4} {:>9} {:>6} {:>4} {:>8} {:>8}", "d", "g", "Nx", "R", "esjd", "ess");
    for r in &ens.trace {
        println!("{:>4} {:>9.5} {:>6} {:>4} {:>8.2} {:>8.1}", r.d, r.g_d, r.nx, r.r, r.esjd, r.ess);
    }
    println!("likelihood evaluations: {}", ens.tll);
    let (mean, var) = (ens.posterior_mean(), ens.posterior_variance());
    for (j, name) in bm.spec().param_names.iter().enumerate() {
        println!("{name:>6}: {:.3} ± {:.3}", mean[j], var[j].sqrt());
    }
}
