//! PMMH with a noisy but unbiased likelihood estimator still targets the
//! exact posterior.

use adaptive_smc2::filter::StateCloud;
use adaptive_smc2::math::mean_var;
use adaptive_smc2::models::testing::ConstantObservation;
use adaptive_smc2::models::{Dataset, StateSpaceModel};
use adaptive_smc2::pmmh::{pmmh_step_with, ProposalSpec, Target, ThetaParticle};
use adaptive_smc2::rng::{Purpose, RngStreams};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

/// Prior N(0, 1) times likelihood exp(-(a - 1)^2 / 2) gives N(0.5, 0.5).
fn exact_loglik(a: f64) -> f64 {
    -0.5 * (a - 1.0) * (a - 1.0)
}

fn chain(noise_sd: f64, iters: usize, seed: u64) -> (f64, f64, f64) {
    let model = ConstantObservation::new(0.0);
    let spec = model.spec();
    let data = Dataset::new(vec![0.0], 1, "none");
    let target = Target::new(&data, 1, 1.0);
    let proposal = ProposalSpec { cov: DMatrix::from_element(1, 1, 1.0), scale: 1.0 }.prepare();
    let mut rng = RngStreams::new(seed).stream(Purpose::Mutate, 0, 0);
    // ln of a mean-one log-normal factor.
    let noise = Normal::new(-0.5 * noise_sd * noise_sd, noise_sd).unwrap();
    let mut p = ThetaParticle::new(spec, vec![0.0], 1);
    p.log_lik = exact_loglik(0.0);
    let mut xs = Vec::with_capacity(iters);
    let mut accepted = 0;
    for _ in 0..iters {
        let step = pmmh_step_with(&mut p, spec, &target, &proposal, &mut rng, |theta, rng| {
            let ll = exact_loglik(theta[0]) + noise.sample(rng);
            (StateCloud::empty(1, 1), ll, 1)
        });
        accepted += step.accepted as usize;
        xs.push(p.theta[0]);
    }
    let (m, v) = mean_var(&xs[iters / 10..]);
    (m, v, accepted as f64 / iters as f64)
}

#[test]
fn exact_likelihood_chain_hits_posterior() {
    let (m, v, _) = chain(0.0, 200_000, 1);
    assert!((m - 0.5).abs() < 0.02, "{m}");
    assert!((v - 0.5).abs() < 0.03, "{v}");
}

#[test]
fn noisy_likelihood_chain_hits_same_posterior() {
    let (m, v, acc_noisy) = chain(1.0, 400_000, 2);
    assert!((m - 0.5).abs() < 0.03, "{m}");
    assert!((v - 0.5).abs() < 0.05, "{v}");
    let (_, _, acc_exact) = chain(0.0, 20_000, 3);
    assert!(acc_noisy < acc_exact, "noise should cost acceptance");
}
