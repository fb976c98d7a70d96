use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson, StandardNormal};

use super::{normal_log_density, ModelSpec, Prior, StateSpaceModel, Transform};
use crate::rng::StreamRng;

/// One-factor Lévy-driven stochastic volatility model.
///
/// Parameters `(xi, omega2, lambda, beta, mu)`; the latent state is the pair
/// `(v_t, z_t)` of integrated volatility and spot volatility. Over each unit
/// interval `k ~ Poisson(lambda xi^2 / omega2)` jumps arrive at uniform times
/// with `Exp(xi / omega2)` sizes:
///
/// ```text
/// z_t = e^{-lambda} z_{t-1} + sum_j e^{-lambda (t - c_j)} e_j
/// v_t = (z_{t-1} - z_t + sum_j e_j) / lambda
/// y_t ~ N(mu + beta v_t, v_t)
/// ```
///
/// `z_0` is drawn from the stationary `Gamma(xi^2/omega2, rate xi/omega2)`.
/// The transition density has no closed form; it is only simulated.
#[derive(Debug, Clone)]
pub struct StochasticVolatility {
    spec: ModelSpec,
}

impl StochasticVolatility {
    pub fn new() -> Self {
        Self {
            spec: ModelSpec {
                id: "sv1f",
                param_names: vec!["xi", "omega2", "lambda", "beta", "mu"],
                dim_state: 2,
                dim_obs: 1,
                transforms: vec![
                    Transform::Log,
                    Transform::Log,
                    Transform::Log,
                    Transform::Identity,
                    Transform::Identity,
                ],
                priors: vec![
                    Prior::Exponential { rate: 0.2 },
                    Prior::Exponential { rate: 0.2 },
                    Prior::Exponential { rate: 1.0 },
                    Prior::Normal { mean: 0.0, sd: std::f64::consts::SQRT_2 },
                    Prior::Normal { mean: 0.0, sd: std::f64::consts::SQRT_2 },
                ],
            },
        }
    }

    /// Draw from the stationary law of `z`.
    pub fn sample_stationary_z(theta: &[f64], rng: &mut StreamRng) -> f64 {
        let (xi, w2) = (theta[0], theta[1]);
        Gamma::new(xi * xi / w2, w2 / xi).expect("positive gamma parameters").sample(rng)
    }

    fn step(theta: &[f64], z_prev: f64, rng: &mut StreamRng, out: &mut [f64]) {
        let (xi, w2, lambda) = (theta[0], theta[1], theta[2]);
        let rate = lambda * xi * xi / w2;
        let k = if rate > 0.0 {
            Poisson::new(rate).map(|p| p.sample(rng) as u64).unwrap_or(0)
        } else {
            0
        };
        let jump = Exp::new(xi / w2).expect("positive exponential rate");
        let mut sum_e = 0.0;
        let mut decayed = 0.0;
        for _ in 0..k {
            let e = jump.sample(rng);
            let since: f64 = rng.random::<f64>();
            sum_e += e;
            decayed += (-lambda * since).exp() * e;
        }
        let z = (-lambda).exp() * z_prev + decayed;
        out[0] = (z_prev - z + sum_e) / lambda;
        out[1] = z;
    }
}

impl Default for StochasticVolatility {
    fn default() -> Self {
        Self::new()
    }
}

impl StateSpaceModel for StochasticVolatility {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn sample_initial_state(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let z0 = Self::sample_stationary_z(theta, rng);
        Self::step(theta, z0, rng, out);
    }

    fn sample_transition(&self, theta: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        Self::step(theta, x_prev[1], rng, out);
    }

    fn log_obs_density(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        let v = x[0];
        if !(v.is_finite() && v > 0.0) {
            return f64::NEG_INFINITY;
        }
        normal_log_density(y[0], theta[4] + theta[3] * v, v)
    }

    fn sample_observation(&self, theta: &[f64], x: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let v = x[0].max(0.0);
        let eps: f64 = rng.sample(StandardNormal);
        out[0] = theta[4] + theta[3] * v + v.sqrt() * eps;
    }
}
