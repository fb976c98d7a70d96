//! Oracles and scoring: the Kalman likelihood for the Brownian-motion model,
//! long Metropolis-Hastings reference chains, and efficiency scores relative
//! to a baseline run.

use std::f64::consts::PI;

use log::debug;
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::run_filter;
use crate::math::{mean_var, weighted_covariance};
use crate::models::{BrownianMotion, Dataset, StateSpaceModel};
use crate::pmmh::{log_acceptance, ProposalSpec};
use crate::rng::{Purpose, RngStreams, StreamRng};

/// Exact `ln p(y_{1:t_end} | theta)` for the Brownian-motion model by the
/// Kalman filter. `theta = (x0, beta, gamma, sigma)`.
pub fn kalman_loglik(theta: &[f64], data: &Dataset, t_end: usize) -> f64 {
    assert!(t_end <= data.len());
    let drift = BrownianMotion::drift(theta);
    let (q, r) = (theta[2] * theta[2], theta[3] * theta[3]);
    let mut m = theta[0] + drift;
    let mut p = q;
    let mut ll = 0.0;
    for t in 0..t_end {
        if t > 0 {
            m += drift;
            p += q;
        }
        let s = p + r;
        let e = data.obs(t)[0] - m;
        ll += -0.5 * ((2.0 * PI * s).ln() + e * e / s);
        let k = p / s;
        m += k * e;
        p *= 1.0 - k;
    }
    ll
}

/// How a reference chain evaluates the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMethod {
    /// Exact Kalman likelihood (Brownian-motion model only).
    ExactMcmc,
    /// Particle-marginal MH with a fixed number of state particles.
    Pmmh { nx: usize },
}

/// Settings for a reference chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceConfig {
    pub method: ReferenceMethod,
    /// Total iterations, burn-in included.
    pub length: usize,
    pub burn_in_fraction: f64,
    pub batches: usize,
    pub seed: u64,
    /// Starting point (constrained). Defaults to the best of a batch of prior draws.
    pub start: Option<Vec<f64>>,
}

impl ReferenceConfig {
    pub fn new(method: ReferenceMethod, length: usize, seed: u64) -> Self {
        Self { method, length, burn_in_fraction: 0.1, batches: 50, seed, start: None }
    }
}

/// Posterior means from a reference chain with batch-means standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferencePosterior {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub mean_unconstrained: Vec<f64>,
    pub se_unconstrained: Vec<f64>,
    pub acceptance: f64,
    pub ll_count: u64,
}

/// Batch-means standard error of the mean of `xs`.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(xs.len());
    let size = xs.len() / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
    (mean_var(&means).1 / b as f64).sqrt()
}

/// Random-walk MH on the unconstrained scale. The proposal covariance adapts
/// to the chain during burn-in and is frozen afterwards. `log_lik` maps a
/// constrained parameter to `(estimate, likelihood evaluations)`.
fn mh_chain<F>(
    model: &dyn StateSpaceModel,
    config: &ReferenceConfig,
    start_u: Vec<f64>,
    mut log_lik: F,
) -> (Vec<Vec<f64>>, f64, u64)
where
    F: FnMut(&[f64], &mut StreamRng) -> (f64, u64),
{
    let spec = model.spec();
    let d = spec.dim_theta();
    let streams = RngStreams::new(config.seed);
    let mut rng = streams.stream(Purpose::Reference, 1, 0);
    let burn_in = ((config.length as f64) * config.burn_in_fraction).round() as usize;
    let scale = 2.38 * 2.38 / d as f64;

    let mut u = start_u;
    let mut lp = spec.log_prior_unconstrained(&u);
    let (mut ll, mut count) = log_lik(&spec.to_constrained(&u), &mut rng);
    let mut proposal = ProposalSpec { cov: DMatrix::identity(d, d) * 0.01, scale: 1.0 }.prepare();
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(burn_in);
    let mut kept = Vec::with_capacity(config.length - burn_in);
    let mut accepted = 0usize;

    for it in 0..config.length {
        if it < burn_in && it >= 200 && it % 200 == 0 {
            let rows: Vec<&[f64]> = history[history.len() / 2..].iter().map(|r| r.as_slice()).collect();
            let w = vec![1.0; rows.len()];
            proposal = ProposalSpec { cov: weighted_covariance(&rows, &w), scale }.prepare();
        }
        let u_star = proposal.propose(&u, &mut rng);
        let lp_star = spec.log_prior_unconstrained(&u_star);
        if lp_star > f64::NEG_INFINITY {
            let (ll_star, c) = log_lik(&spec.to_constrained(&u_star), &mut rng);
            count += c;
            let log_alpha = log_acceptance(lp + ll, lp_star + ll_star);
            if rng.random::<f64>().ln() < log_alpha {
                u = u_star;
                lp = lp_star;
                ll = ll_star;
                if it >= burn_in {
                    accepted += 1;
                }
            }
        }
        if it < burn_in {
            history.push(u.clone());
        } else {
            kept.push(u.clone());
        }
    }
    let acceptance = accepted as f64 / kept.len().max(1) as f64;
    (kept, acceptance, count)
}

/// Constrained parameter to (log-likelihood estimate, evaluations).
type LikEstimator<'a> = Box<dyn FnMut(&[f64], &mut StreamRng) -> (f64, u64) + 'a>;

/// Long-chain estimate of the posterior mean, used as ground truth.
pub fn reference_posterior_mean(
    model: &dyn StateSpaceModel,
    data: &Dataset,
    config: &ReferenceConfig,
) -> Result<ReferencePosterior> {
    if config.length == 0 {
        return Err(Error::domain("reference chain length must be positive"));
    }
    let burn_in = ((config.length as f64) * config.burn_in_fraction).round() as usize;
    if config.length <= burn_in + config.batches {
        return Err(Error::domain("reference chain too short for the burn-in and batch count"));
    }
    let spec = model.spec();
    let t = data.len();
    let mut estimator: LikEstimator<'_> = match config.method {
        ReferenceMethod::ExactMcmc => {
            if spec.id != "bm" {
                return Err(Error::config(format!(
                    "exact likelihood is only available for the bm model, not '{}'",
                    spec.id
                )));
            }
            Box::new(move |theta: &[f64], _: &mut StreamRng| (kalman_loglik(theta, data, t), 0))
        }
        ReferenceMethod::Pmmh { nx } => Box::new(move |theta: &[f64], rng: &mut StreamRng| {
            let out = run_filter(model, theta, data, t, nx, rng);
            (out.log_lik, out.ll_count)
        }),
    };

    let start_u = match &config.start {
        Some(theta) => {
            if !spec.in_support(theta) {
                return Err(Error::domain("reference chain start is outside the prior support"));
            }
            spec.to_unconstrained(theta)
        }
        None => {
            let streams = RngStreams::new(config.seed);
            let mut best = (f64::NEG_INFINITY, Vec::new());
            for i in 0..500 {
                let mut rng = streams.stream(Purpose::Reference, 0, i);
                let theta = spec.sample_prior(&mut rng);
                let u = spec.to_unconstrained(&theta);
                let score = spec.log_prior_unconstrained(&u) + estimator(&theta, &mut rng).0;
                if score > best.0 || best.1.is_empty() {
                    best = (score, u);
                }
            }
            best.1
        }
    };

    let (kept, acceptance, ll_count) = mh_chain(model, config, start_u, &mut *estimator);
    debug!("reference chain acceptance {acceptance:.3}");
    let d = spec.dim_theta();
    let mut out = ReferencePosterior {
        mean: Vec::with_capacity(d),
        se: Vec::with_capacity(d),
        mean_unconstrained: Vec::with_capacity(d),
        se_unconstrained: Vec::with_capacity(d),
        acceptance,
        ll_count,
    };
    for j in 0..d {
        let us: Vec<f64> = kept.iter().map(|u| u[j]).collect();
        let ts: Vec<f64> = us.iter().map(|&x| spec.transforms[j].inverse(x)).collect();
        out.mean_unconstrained.push(mean_var(&us).0);
        out.se_unconstrained.push(batch_means_se(&us, config.batches));
        out.mean.push(mean_var(&ts).0);
        out.se.push(batch_means_se(&ts, config.batches));
    }
    Ok(out)
}

/// Mean over parameters of the squared error of an estimate, both given on
/// the unconstrained scale.
pub fn mse(estimate_u: &[f64], reference_u: &[f64]) -> f64 {
    assert_eq!(estimate_u.len(), reference_u.len());
    estimate_u
        .iter()
        .zip(reference_u)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / estimate_u.len() as f64
}

/// Accuracy and cost of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunInput {
    pub id: String,
    pub mse: f64,
    pub tll: f64,
}

/// Scores relative to the baseline; higher is better.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub id: String,
    pub mse: f64,
    pub tll: f64,
    pub z_mse: f64,
    pub z_tll: f64,
    pub z: f64,
}

/// `z_mse = mse_base / mse`, `z_tll = tll_base / tll`, `z = z_mse * z_tll`.
pub fn score_runs(runs: &[RunInput], baseline: &str) -> Result<Vec<RunMetrics>> {
    let base = runs
        .iter()
        .find(|r| r.id == baseline)
        .ok_or_else(|| Error::config(format!("baseline '{baseline}' is not among the runs")))?;
    runs.iter()
        .map(|r| {
            if !(r.tll > 0.0) {
                return Err(Error::domain(format!("run '{}' has zero total likelihood evaluations", r.id)));
            }
            if !(r.mse > 0.0) {
                return Err(Error::domain(format!("run '{}' has zero squared error", r.id)));
            }
            let z_mse = base.mse / r.mse;
            let z_tll = base.tll / r.tll;
            Ok(RunMetrics {
                id: r.id.clone(),
                mse: r.mse,
                tll: r.tll,
                z_mse,
                z_tll,
                z: z_mse * z_tll,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate_dataset, Prior};

    fn log_normal(x: f64, m: f64, v: f64) -> f64 {
        -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v)
    }

    #[test]
    fn noise_free_latent_limit() {
        let bm = BrownianMotion::new();
        let theta = [1.0, 1.2, 1e-9, 0.8];
        let data = simulate_dataset(&bm, &theta, 10, 3).unwrap();
        let direct: f64 = (0..10)
            .map(|t| log_normal(data.obs(t)[0], 1.0 + 1.2 * (t + 1) as f64, 0.64))
            .sum();
        assert!((kalman_loglik(&theta, &data, 10) - direct).abs() < 1e-6);
    }

    #[test]
    fn matches_gauss_hermite_quadrature() {
        // 3-D integral over (x1, x2, x3) with a 60-point rule per axis, in
        // terms of the independent innovations.
        let theta = [0.5, 0.3, 0.7, 0.9];
        let data = Dataset::new(vec![0.9, 1.1, 2.0], 1, "x");
        let (nodes, weights) = gauss_hermite(60);
        let drift = BrownianMotion::drift(&theta);
        let mut total = 0.0;
        for (i, &z1) in nodes.iter().enumerate() {
            let x1 = theta[0] + drift + theta[2] * std::f64::consts::SQRT_2 * z1;
            let g1 = log_normal(data.obs(0)[0], x1, theta[3] * theta[3]).exp();
            for (j, &z2) in nodes.iter().enumerate() {
                let x2 = x1 + drift + theta[2] * std::f64::consts::SQRT_2 * z2;
                let g2 = log_normal(data.obs(1)[0], x2, theta[3] * theta[3]).exp();
                for (k, &z3) in nodes.iter().enumerate() {
                    let x3 = x2 + drift + theta[2] * std::f64::consts::SQRT_2 * z3;
                    let g3 = log_normal(data.obs(2)[0], x3, theta[3] * theta[3]).exp();
                    total += weights[i] * weights[j] * weights[k] * g1 * g2 * g3;
                }
            }
        }
        let quad = (total / PI.powf(1.5)).ln();
        assert!((kalman_loglik(&theta, &data, 3) - quad).abs() < 1e-6, "{quad}");
    }

    /// Gauss-Hermite nodes and weights (physicists' convention) by Newton
    /// iteration on the orthonormal recurrence.
    fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let pim4 = PI.powf(-0.25);
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() < 1e-14 {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        (x, w)
    }

    #[test]
    fn quadrature_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_hermite(20);
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((m0 - PI.sqrt()).abs() < 1e-12);
        assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn tight_priors_concentrate_near_truth() {
        let truth = [1.0, 1.2, 1.5, 1.0];
        let bm = BrownianMotion::new().with_priors(vec![
            Prior::Normal { mean: 1.0, sd: 0.05 },
            Prior::Normal { mean: 1.2, sd: 0.05 },
            Prior::Normal { mean: 1.5, sd: 0.05 },
            Prior::Normal { mean: 1.0, sd: 0.05 },
        ]);
        let data = simulate_dataset(&bm, &truth, 100, 11).unwrap();
        let mut cfg = ReferenceConfig::new(ReferenceMethod::ExactMcmc, 20_000, 2);
        cfg.start = Some(truth.to_vec());
        let post = reference_posterior_mean(&bm, &data, &cfg).unwrap();
        for (m, t) in post.mean.iter().zip(truth) {
            assert!((m - t).abs() < 0.1, "{:?}", post.mean);
        }
    }

    #[test]
    fn independent_chains_agree() {
        let bm = BrownianMotion::new();
        let data = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 100, 1).unwrap();
        let a = reference_posterior_mean(&bm, &data, &ReferenceConfig::new(ReferenceMethod::ExactMcmc, 60_000, 1)).unwrap();
        let b = reference_posterior_mean(&bm, &data, &ReferenceConfig::new(ReferenceMethod::ExactMcmc, 60_000, 2)).unwrap();
        for j in 0..4 {
            let se = (a.se_unconstrained[j].powi(2) + b.se_unconstrained[j].powi(2)).sqrt();
            let diff = (a.mean_unconstrained[j] - b.mean_unconstrained[j]).abs();
            assert!(diff < 3.0 * se, "param {j}: diff {diff} se {se}");
        }
        assert!(a.acceptance > 0.1 && a.acceptance < 0.6);
    }

    #[test]
    fn zero_length_is_an_error() {
        let bm = BrownianMotion::new();
        let data = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 5, 1).unwrap();
        assert!(reference_posterior_mean(&bm, &data, &ReferenceConfig::new(ReferenceMethod::ExactMcmc, 0, 1)).is_err());
        let sv = crate::models::StochasticVolatility::new();
        let d = Dataset::new(vec![0.1; 5], 1, "x");
        assert!(reference_posterior_mean(&sv, &d, &ReferenceConfig::new(ReferenceMethod::ExactMcmc, 1000, 1)).is_err());
    }

    #[test]
    fn scoring_examples() {
        let runs = vec![
            RunInput { id: "gs".into(), mse: 0.2, tll: 1000.0 },
            RunInput { id: "m".into(), mse: 0.1, tll: 2000.0 },
        ];
        let s = score_runs(&runs, "gs").unwrap();
        assert_eq!((s[0].z_mse, s[0].z_tll, s[0].z), (1.0, 1.0, 1.0));
        assert_eq!((s[1].z_mse, s[1].z_tll, s[1].z), (2.0, 0.5, 1.0));
        let bad = vec![RunInput { id: "gs".into(), mse: 0.2, tll: 0.0 }];
        assert!(score_runs(&bad, "gs").is_err());
        assert!(score_runs(&runs, "missing").is_err());
    }

    #[test]
    fn batch_means_of_iid_draws() {
        let mut rng = RngStreams::new(1).stream(Purpose::Reference, 0, 0);
        let xs: Vec<f64> = (0..50_000).map(|_| rng.random::<f64>()).collect();
        let se = batch_means_se(&xs, 50);
        let iid = (1.0 / 12.0 / 50_000.0f64).sqrt();
        assert!(se > 0.6 * iid && se < 1.4 * iid, "{se} vs {iid}");
    }
}
