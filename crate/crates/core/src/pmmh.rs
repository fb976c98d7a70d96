//! Particle-marginal Metropolis-Hastings mutation kernel.
//!
//! Proposals are a multivariate normal random walk on the unconstrained
//! parameter scale, so the proposal density cancels and the log acceptance
//! ratio is the difference of target log-densities. The target is
//!
//! ```text
//! pi(u) = p(u) * p̂(y_{1:t} | theta(u))^g                    (plain)
//! pi(u) = Q(u)^{1-g} * [p(u) * p̂(y_{1:t} | theta(u))]^g      (with a reference Q)
//! ```
//!
//! where `p(u)` is the prior on the unconstrained scale, Jacobian included.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::filter::{run_filter, StateCloud};
use crate::math::{cholesky_jittered, mahalanobis_sq, weighted_covariance};
use crate::mixture::GaussianMixture;
use crate::models::{Dataset, ModelSpec, StateSpaceModel};
use crate::rng::{Purpose, RngStreams, StreamRng};

/// Diagonal jitter added to a proposal covariance that is not positive definite.
pub const PROPOSAL_JITTER: f64 = 1e-9;

/// One row of the SMC² ensemble: a parameter value with its state cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParticle {
    /// Constrained parameter values.
    pub theta: Vec<f64>,
    /// The same point on the unconstrained scale.
    pub u: Vec<f64>,
    /// Prior log-density on the unconstrained scale (Jacobian included).
    pub log_prior: f64,
    /// Current log-likelihood estimate; `-inf` for a degenerate cloud.
    pub log_lik: f64,
    /// Reference log-density `ln Q(u)`, zero when no reference is in use.
    pub log_ref: f64,
    pub cloud: StateCloud,
}

impl ThetaParticle {
    /// Particle at constrained `theta` with an empty cloud.
    pub fn new(spec: &ModelSpec, theta: Vec<f64>, nx: usize) -> Self {
        let u = spec.to_unconstrained(&theta);
        let log_prior = spec.log_prior_unconstrained(&u);
        Self {
            theta,
            u,
            log_prior,
            log_lik: 0.0,
            log_ref: 0.0,
            cloud: StateCloud::empty(nx, spec.dim_state),
        }
    }

    pub fn install_cloud(&mut self, cloud: StateCloud) {
        self.log_lik = cloud.log_lik();
        self.cloud = cloud;
    }
}

/// What a PMMH step targets.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub data: &'a Dataset,
    /// Observations `y_{1:t_end}` enter the likelihood.
    pub t_end: usize,
    /// Exponent on the likelihood (and on the prior when a reference is set).
    pub temperature: f64,
    pub reference: Option<&'a GaussianMixture>,
}

impl<'a> Target<'a> {
    pub fn new(data: &'a Dataset, t_end: usize, temperature: f64) -> Self {
        Self { data, t_end, temperature, reference: None }
    }

    pub fn with_reference(mut self, reference: Option<&'a GaussianMixture>) -> Self {
        self.reference = reference;
        self
    }

    /// Unnormalized target log-density from its components.
    pub fn log_density(&self, log_prior: f64, log_lik: f64, log_ref: f64) -> f64 {
        let g = self.temperature;
        match self.reference {
            None => log_prior + scaled(g, log_lik),
            Some(_) => scaled(1.0 - g, log_ref) + scaled(g, log_prior + log_lik),
        }
    }
}

/// `a * x` with the convention `0 * (-inf) = 0`.
#[inline]
pub(crate) fn scaled(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * x
    }
}

/// Random-walk proposal: covariance on the unconstrained scale and a scalar
/// multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSpec {
    pub cov: DMatrix<f64>,
    pub scale: f64,
}

impl ProposalSpec {
    /// Factorize once for a sweep.
    pub fn prepare(&self) -> PreparedProposal {
        let (l, jitter) = cholesky_jittered(&self.cov, PROPOSAL_JITTER);
        let n = self.cov.nrows();
        let cov = &self.cov + DMatrix::identity(n, n) * jitter;
        let chol = cov.clone().cholesky().expect("jittered covariance factorizes");
        PreparedProposal {
            step_factor: l * self.scale.sqrt(),
            cov_inv: chol.inverse(),
        }
    }
}

/// A factorized proposal, immutable during a sweep.
#[derive(Debug, Clone)]
pub struct PreparedProposal {
    /// Lower Cholesky factor of `scale * cov`.
    pub step_factor: DMatrix<f64>,
    /// Inverse of the (jittered, unscaled) ensemble covariance, for ESJD.
    pub cov_inv: DMatrix<f64>,
}

impl PreparedProposal {
    pub fn propose(&self, u: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let z = DVector::from_iterator(u.len(), (0..u.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &self.step_factor * z;
        u.iter().zip(step.iter()).map(|(a, b)| a + b).collect()
    }
}

/// Weighted covariance of the unconstrained particles, scaled by `2.38^2 / d`.
pub fn default_proposal(particles: &[ThetaParticle], weights: &[f64]) -> ProposalSpec {
    let rows: Vec<&[f64]> = particles.iter().map(|p| p.u.as_slice()).collect();
    let cov = weighted_covariance(&rows, weights);
    let d = cov.nrows().max(1) as f64;
    ProposalSpec { cov, scale: 2.38 * 2.38 / d }
}

/// Outcome of a single PMMH iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub accepted: bool,
    pub alpha: f64,
    /// Squared Mahalanobis distance of the proposed jump.
    pub jump_sq: f64,
    pub ll_count: u64,
}

/// `alpha * (u - u*)^T inv (u - u*)`.
pub fn esjd_increment(u: &[f64], u_star: &[f64], alpha: f64, cov_inv: &DMatrix<f64>) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    let diff: Vec<f64> = u.iter().zip(u_star).map(|(a, b)| a - b).collect();
    alpha * mahalanobis_sq(&diff, cov_inv)
}

/// Log acceptance probability `min(0, target* - target)`, with impossible
/// proposals mapping to `-inf` and escapes from an impossible current state
/// to `0`.
pub fn log_acceptance(log_target_current: f64, log_target_proposed: f64) -> f64 {
    if log_target_proposed == f64::NEG_INFINITY || log_target_proposed.is_nan() {
        return f64::NEG_INFINITY;
    }
    if log_target_current == f64::NEG_INFINITY {
        return 0.0;
    }
    (log_target_proposed - log_target_current).min(0.0)
}

/// One PMMH iteration with a caller-supplied likelihood estimator, which maps
/// a constrained parameter to `(cloud, ll_count)`; the cloud's log-likelihood
/// is taken as the estimate.
pub fn pmmh_step_with<F>(
    particle: &mut ThetaParticle,
    spec: &ModelSpec,
    target: &Target,
    proposal: &PreparedProposal,
    rng: &mut StreamRng,
    estimate: F,
) -> StepResult
where
    F: FnOnce(&[f64], &mut StreamRng) -> (StateCloud, f64, u64),
{
    let u_star = proposal.propose(&particle.u, rng);
    let log_prior_star = spec.log_prior_unconstrained(&u_star);
    let jump_sq = {
        let diff: Vec<f64> = particle.u.iter().zip(&u_star).map(|(a, b)| a - b).collect();
        mahalanobis_sq(&diff, &proposal.cov_inv)
    };
    let rejected = StepResult { accepted: false, alpha: 0.0, jump_sq, ll_count: 0 };
    if log_prior_star == f64::NEG_INFINITY {
        return rejected;
    }
    let theta_star = spec.to_constrained(&u_star);
    if theta_star.iter().any(|v| !v.is_finite()) {
        return rejected;
    }
    let log_ref_star = target.reference.map_or(0.0, |q| q.log_density(&u_star));
    let (cloud, log_lik_star, ll_count) = estimate(&theta_star, rng);
    let current = target.log_density(particle.log_prior, particle.log_lik, particle.log_ref);
    let proposed = target.log_density(log_prior_star, log_lik_star, log_ref_star);
    let log_alpha = log_acceptance(current, proposed);
    let alpha = log_alpha.exp();
    let accepted = alpha > 0.0 && rng.random::<f64>().ln() < log_alpha;
    if accepted {
        particle.theta = theta_star;
        particle.u = u_star;
        particle.log_prior = log_prior_star;
        particle.log_ref = log_ref_star;
        particle.log_lik = log_lik_star;
        particle.cloud = cloud;
    }
    StepResult { accepted, alpha, jump_sq, ll_count }
}

/// One PMMH iteration running a fresh bootstrap filter with `nx` particles at
/// the proposed parameter.
pub fn pmmh_step<M: StateSpaceModel + ?Sized>(
    particle: &mut ThetaParticle,
    model: &M,
    target: &Target,
    proposal: &PreparedProposal,
    nx: usize,
    rng: &mut StreamRng,
) -> StepResult {
    pmmh_step_with(particle, model.spec(), target, proposal, rng, |theta, rng| {
        let out = run_filter(model, theta, target.data, target.t_end, nx, rng);
        (out.cloud, out.log_lik, out.ll_count)
    })
}

/// Totals over one or more sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MutationReport {
    pub accepted: u64,
    pub proposed: u64,
    /// Sum over sweeps of the particle-averaged `alpha * jump^2`.
    pub esjd: f64,
    pub ll_count: u64,
}

impl MutationReport {
    pub fn absorb(&mut self, other: &MutationReport) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
        self.esjd += other.esjd;
        self.ll_count += other.ll_count;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// One PMMH iteration for every particle, in parallel. Particle `n` uses the
/// stream `(Mutate, op, n)`. The reported ESJD is the average of the
/// per-particle increments.
pub fn mutation_sweep<M: StateSpaceModel + ?Sized>(
    particles: &mut [ThetaParticle],
    model: &M,
    target: &Target,
    proposal: &PreparedProposal,
    nx: usize,
    streams: &RngStreams,
    op: u64,
) -> MutationReport {
    let results: Vec<StepResult> = particles
        .par_iter_mut()
        .enumerate()
        .map(|(n, p)| {
            let mut rng = streams.stream(Purpose::Mutate, op, n as u64);
            pmmh_step(p, model, target, proposal, nx, &mut rng)
        })
        .collect();
    let n = results.len().max(1) as f64;
    MutationReport {
        accepted: results.iter().filter(|r| r.accepted).count() as u64,
        proposed: results.len() as u64,
        esjd: results.iter().map(|r| r.alpha * r.jump_sq).sum::<f64>() / n,
        ll_count: results.iter().map(|r| r.ll_count).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::ConstantObservation;

    fn stream(i: u64) -> StreamRng {
        RngStreams::new(5).stream(Purpose::Mutate, 0, i)
    }

    #[test]
    fn equal_targets_accept_with_probability_one() {
        assert_eq!(log_acceptance(-3.2, -3.2), 0.0);
        assert_eq!(log_acceptance(-3.2, -1.0), 0.0);
    }

    #[test]
    fn impossible_proposal_is_rejected() {
        assert_eq!(log_acceptance(-3.0, f64::NEG_INFINITY), f64::NEG_INFINITY);
        // a degenerate current state is always left
        assert_eq!(log_acceptance(f64::NEG_INFINITY, -1e6), 0.0);
    }

    #[test]
    fn tempered_ratio() {
        let data = Dataset::empty(1);
        let t = Target::new(&data, 0, 0.5);
        let cur = t.log_density(0.0, 0.0, 0.0);
        let prop = t.log_density(0.0, 0.25f64.ln(), 0.0);
        assert!((log_acceptance(cur, prop).exp() - 0.5).abs() < 1e-15);
        let prop = t.log_density(0.0, 4f64.ln(), 0.0);
        assert_eq!(log_acceptance(cur, prop).exp(), 1.0);
    }

    #[test]
    fn swapped_roles_give_reciprocal_ratio() {
        let data = Dataset::empty(1);
        let t = Target::new(&data, 0, 0.7);
        let a = t.log_density(-1.3, -20.0, 0.0);
        let b = t.log_density(-0.4, -23.5, 0.0);
        let forward = b - a;
        let backward = a - b;
        assert!((forward.exp() * backward.exp() - 1.0).abs() < 1e-12);
        assert_eq!(log_acceptance(a, b), forward.min(0.0));
        assert_eq!(log_acceptance(b, a), backward.min(0.0));
    }

    #[test]
    fn zero_temperature_ignores_degenerate_likelihood() {
        let data = Dataset::empty(1);
        let t = Target::new(&data, 0, 0.0);
        assert_eq!(t.log_density(-2.0, f64::NEG_INFINITY, 0.0), -2.0);
    }

    #[test]
    fn esjd_increment_examples() {
        let inv = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(esjd_increment(&[1.0], &[1.0], 0.7, &inv), 0.0);
        assert_eq!(esjd_increment(&[1.0], &[3.0], 0.0, &inv), 0.0);
        assert_eq!(esjd_increment(&[0.0], &[2.0], 0.5, &inv), 2.0);
    }

    #[test]
    fn default_proposal_two_points() {
        let spec = ConstantObservation::new(0.0).spec().clone();
        let ps = vec![ThetaParticle::new(&spec, vec![0.0], 1), ThetaParticle::new(&spec, vec![2.0], 1)];
        let prop = default_proposal(&ps, &[0.5, 0.5]);
        assert!((prop.cov[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((prop.scale - 5.6644).abs() < 1e-12);
    }

    #[test]
    fn scale_for_five_parameters() {
        let sv = crate::models::StochasticVolatility::new();
        let mut rng = stream(0);
        let ps: Vec<ThetaParticle> = (0..10)
            .map(|_| ThetaParticle::new(sv.spec(), sv.spec().sample_prior(&mut rng), 1))
            .collect();
        let p = default_proposal(&ps, &[0.1; 10]);
        assert_eq!(p.cov.nrows(), 5);
        assert!((p.scale - 1.13288).abs() < 1e-12);
    }

    #[test]
    fn identical_particles_get_jittered_proposal() {
        let spec = ConstantObservation::new(0.0).spec().clone();
        let ps = vec![ThetaParticle::new(&spec, vec![1.0], 1); 4];
        let prop = default_proposal(&ps, &[0.25; 4]).prepare();
        assert!(prop.step_factor[(0, 0)] > 0.0);
        assert!(prop.cov_inv[(0, 0)].is_finite());
        let u = prop.propose(&[1.0], &mut stream(1));
        assert!((u[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn out_of_support_proposal_runs_no_filter() {
        let model = crate::models::Ricker::new();
        let spec = model.spec().clone();
        let data = Dataset::new(vec![1.0; 4], 1, "x");
        let mut p = ThetaParticle::new(&spec, vec![2.0, 3.5, 0.0], 5);
        p.log_lik = -10.0;
        // A proposal that jumps far outside the uniform box.
        let prop = ProposalSpec { cov: DMatrix::identity(3, 3) * 1e6, scale: 1.0 }.prepare();
        let target = Target::new(&data, 4, 1.0);
        let mut evaluated = false;
        let r = pmmh_step_with(&mut p, &spec, &target, &prop, &mut stream(2), |_, _| {
            evaluated = true;
            (StateCloud::empty(1, 1), 0.0, 0)
        });
        assert!(!evaluated);
        assert_eq!(r.alpha, 0.0);
        assert!(!r.accepted);
        assert_eq!(p.theta, vec![2.0, 3.5, 0.0]);
    }

    #[test]
    fn constant_likelihood_chain_samples_prior() {
        // Exact constant likelihood: the chain targets the N(0, 1) prior.
        let model = ConstantObservation::new(-1.0);
        let data = Dataset::new(vec![0.0; 3], 1, "x");
        let target = Target::new(&data, 3, 1.0);
        let prop = ProposalSpec { cov: DMatrix::identity(1, 1), scale: 2.38 * 2.38 }.prepare();
        let mut p = ThetaParticle::new(model.spec(), vec![0.0], 2);
        p.log_lik = -3.0;
        let mut rng = stream(3);
        let mut xs = Vec::new();
        for _ in 0..40_000 {
            let r = pmmh_step(&mut p, &model, &target, &prop, 2, &mut rng);
            assert!(r.alpha >= 0.0 && r.alpha <= 1.0);
            xs.push(p.theta[0]);
        }
        let (m, v) = crate::math::mean_var(&xs);
        assert!(m.abs() < 0.06, "mean {m}");
        assert!((v - 1.0).abs() < 0.08, "var {v}");
    }
}
