//! Long Metropolis-Hastings reference chains: exact Kalman likelihood versus
//! particle-marginal MH with a noisy likelihood estimate. Both target the
//! same posterior; the pseudo-marginal chain mixes more slowly.
//!
//! cargo run --release --example reference_chain

use adaptive_smc2::harness::{reference_posterior_mean, ReferenceConfig, ReferenceMethod};
use adaptive_smc2::models::{simulate_dataset, BrownianMotion, StateSpaceModel};

fn main() {
    let bm = BrownianMotion::new();
    let data = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 50, 7).unwrap();
    let exact = reference_posterior_mean(&bm, &data, &ReferenceConfig::new(ReferenceMethod::ExactMcmc, 100_000, 1)).unwrap();
    let noisy =
        reference_posterior_mean(&bm, &data, &ReferenceConfig::new(ReferenceMethod::Pmmh { nx: 100 }, 20_000, 2)).unwrap();
    println!("acceptance: exact {:.3}, pseudo-marginal {:.3}", exact.acceptance, noisy.acceptance);
    for (j, name) in bm.spec().param_names.iter().enumerate() {
        println!(
            "{name:>6}: exact {:.3} (se {:.3})   pmmh {:.3} (se {:.3})",
            exact.mean[j], exact.se[j], noisy.mean[j], noisy.se[j]
        );
    }
}
