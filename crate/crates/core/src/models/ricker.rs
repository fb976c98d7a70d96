use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use statrs::function::factorial::ln_factorial;

use super::{ModelSpec, Prior, StateSpaceModel, Transform};
use crate::rng::StreamRng;

/// Noisy Ricker population model with Poisson counts.
///
/// Parameters `(log_phi, log_r, log_sigma)` with uniform priors on the log
/// scale:
///
/// ```text
/// x_{t+1} = r x_t exp(-x_t + z_{t+1}),  z ~ N(0, sigma^2),  x_0 = 1
/// y_t ~ Poisson(phi x_t)
/// ```
#[derive(Debug, Clone)]
pub struct Ricker {
    spec: ModelSpec,
}

impl Ricker {
    pub fn new() -> Self {
        Self {
            spec: ModelSpec {
                id: "ricker",
                param_names: vec!["log_phi", "log_r", "log_sigma"],
                dim_state: 1,
                dim_obs: 1,
                transforms: vec![Transform::Identity; 3],
                priors: vec![
                    Prior::Uniform { lo: 1.61, hi: 3.0 },
                    Prior::Uniform { lo: 2.0, hi: 5.0 },
                    Prior::Uniform { lo: -1.8, hi: 1.0 },
                ],
            },
        }
    }
}

impl Default for Ricker {
    fn default() -> Self {
        Self::new()
    }
}

impl StateSpaceModel for Ricker {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn sample_initial_state(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        self.sample_transition(theta, &[1.0], rng, out);
    }

    fn sample_transition(&self, theta: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let (r, sigma) = (theta[1].exp(), theta[2].exp());
        let z: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
        let x = x_prev[0];
        out[0] = r * x * (-x + z).exp();
    }

    fn log_obs_density(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        let rate = theta[0].exp() * x[0];
        let k = y[0];
        if !rate.is_finite() || rate < 0.0 {
            return f64::NEG_INFINITY;
        }
        if rate == 0.0 {
            return if k == 0.0 { 0.0 } else { f64::NEG_INFINITY };
        }
        k * rate.ln() - rate - ln_factorial(k as u64)
    }

    fn sample_observation(&self, theta: &[f64], x: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let rate = theta[0].exp() * x[0];
        out[0] = if rate > 0.0 {
            Poisson::new(rate).map(|p| p.sample(rng)).unwrap_or(0.0)
        } else {
            0.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::simulate_dataset;

    fn truth() -> [f64; 3] {
        [10f64.ln(), 44.7f64.ln(), 0.6f64.ln()]
    }

    #[test]
    fn observations_are_nonnegative_integers() {
        let ds = simulate_dataset(&Ricker::new(), &truth(), 700, 4).unwrap();
        assert_eq!(ds.len(), 700);
        assert!(ds.values().iter().all(|&y| y >= 0.0 && y.fract() == 0.0));
    }

    #[test]
    fn poisson_edge_cases() {
        let m = Ricker::new();
        let th = truth();
        assert_eq!(m.log_obs_density(&th, &[0.0], &[0.0]), 0.0);
        assert_eq!(m.log_obs_density(&th, &[0.0], &[3.0]), f64::NEG_INFINITY);
        // Poisson(10) at 10
        let expected = 10.0 * 10f64.ln() - 10.0 - 3_628_800f64.ln();
        assert!((m.log_obs_density(&th, &[1.0], &[10.0]) - expected).abs() < 1e-10);
    }

    #[test]
    fn uniform_log_prior() {
        let m = Ricker::new();
        let lp = m.log_prior(&[2.0, 3.0, 0.0]);
        let expected = -(1.39f64.ln() + 3f64.ln() + 2.8f64.ln());
        assert!((lp - expected).abs() < 1e-12);
        assert_eq!(m.log_prior(&[3.5, 3.0, 0.0]), f64::NEG_INFINITY);
    }
}
