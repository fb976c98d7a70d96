use rand::Rng;
use rand_distr::StandardNormal;

use super::{normal_log_density, ModelSpec, Prior, StateSpaceModel, Transform};
use crate::rng::StreamRng;

/// Theta-logistic population model on the log scale.
///
/// Parameters `(beta0, beta1, beta2, x0, gamma, sigma, a)`:
///
/// ```text
/// x_{t+1} = x_t + beta0 + beta1 exp(beta2 x_t) + gamma eps_t
/// y_t ~ N(a x_t, sigma^2)
/// ```
///
/// The observation gain is linear in `x_t`. `x0` is the log initial population
/// and carries a half-normal prior on `exp(x0)`.
#[derive(Debug, Clone)]
pub struct ThetaLogistic {
    spec: ModelSpec,
}

impl ThetaLogistic {
    pub fn new() -> Self {
        Self {
            spec: ModelSpec {
                id: "theta-logistic",
                param_names: vec!["beta0", "beta1", "beta2", "x0", "gamma", "sigma", "a"],
                dim_state: 1,
                dim_obs: 1,
                transforms: vec![
                    Transform::Identity,
                    Transform::Identity,
                    Transform::Identity,
                    Transform::Identity,
                    Transform::Log,
                    Transform::Log,
                    Transform::Identity,
                ],
                priors: vec![
                    Prior::Normal { mean: 0.0, sd: 1.0 },
                    Prior::Normal { mean: 0.0, sd: 1.0 },
                    Prior::Normal { mean: 0.0, sd: 1.0 },
                    Prior::HalfNormalOfExp { scale: 1000.0 },
                    Prior::Exponential { rate: 1.0 },
                    Prior::Exponential { rate: 1.0 },
                    Prior::Normal { mean: 1.0, sd: 0.5 },
                ],
            },
        }
    }

    /// A stable parameter set with carrying capacity near 500 individuals,
    /// used to generate synthetic series.
    pub fn synthetic_truth() -> Vec<f64> {
        let beta2: f64 = 0.5;
        let log_k = 500f64.ln();
        let beta0 = 0.2;
        let beta1 = -beta0 / (beta2 * log_k).exp();
        vec![beta0, beta1, beta2, 100f64.ln(), 0.1, 0.2, 1.0]
    }
}

impl Default for ThetaLogistic {
    fn default() -> Self {
        Self::new()
    }
}

impl StateSpaceModel for ThetaLogistic {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn sample_initial_state(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        self.sample_transition(theta, &[theta[3]], rng, out);
    }

    fn sample_transition(&self, theta: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let x = x_prev[0];
        let eps: f64 = rng.sample(StandardNormal);
        out[0] = x + theta[0] + theta[1] * (theta[2] * x).exp() + theta[4] * eps;
    }

    fn log_obs_density(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        if !x[0].is_finite() {
            return f64::NEG_INFINITY;
        }
        normal_log_density(y[0], theta[6] * x[0], theta[5] * theta[5])
    }

    fn sample_observation(&self, theta: &[f64], x: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let eps: f64 = rng.sample(StandardNormal);
        out[0] = theta[6] * x[0] + theta[5] * eps;
    }
}
