use rand::Rng;
use rand_distr::StandardNormal;

use super::{normal_log_density, ModelSpec, Prior, StateSpaceModel, Transform};
use crate::rng::StreamRng;

/// Brownian motion with drift observed in Gaussian noise.
///
/// Parameters `(x0, beta, gamma, sigma)`:
///
/// ```text
/// x_t = x_{t-1} + beta - gamma^2 / 2 + gamma * eps_t,   x_0 = x0
/// y_t = x_t + sigma * eta_t
/// ```
///
/// Linear-Gaussian, so the exact likelihood is available through the Kalman
/// filter in [`crate::harness::kalman_loglik`].
#[derive(Debug, Clone)]
pub struct BrownianMotion {
    spec: ModelSpec,
}

impl BrownianMotion {
    pub fn new() -> Self {
        Self {
            spec: ModelSpec {
                id: "bm",
                param_names: vec!["x0", "beta", "gamma", "sigma"],
                dim_state: 1,
                dim_obs: 1,
                transforms: vec![Transform::Identity, Transform::Identity, Transform::Log, Transform::Log],
                priors: vec![
                    Prior::Normal { mean: 3.0, sd: 5.0 },
                    Prior::Normal { mean: 2.0, sd: 5.0 },
                    Prior::HalfNormal { scale: 2.0 },
                    Prior::HalfNormal { scale: 2.0 },
                ],
            },
        }
    }

    /// Replace the prior (e.g. to pin parameters or tighten it for tests).
    pub fn with_priors(mut self, priors: Vec<Prior>) -> Self {
        assert_eq!(priors.len(), 4);
        self.spec.priors = priors;
        self
    }

    #[inline]
    pub fn drift(theta: &[f64]) -> f64 {
        theta[1] - 0.5 * theta[2] * theta[2]
    }
}

impl Default for BrownianMotion {
    fn default() -> Self {
        Self::new()
    }
}

impl StateSpaceModel for BrownianMotion {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn sample_initial_state(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let x0 = [theta[0]];
        self.sample_transition(theta, &x0, rng, out);
    }

    fn sample_transition(&self, theta: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let eps: f64 = rng.sample(StandardNormal);
        out[0] = x_prev[0] + Self::drift(theta) + theta[2] * eps;
    }

    fn log_obs_density(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        if !x[0].is_finite() {
            return f64::NEG_INFINITY;
        }
        normal_log_density(y[0], x[0], theta[3] * theta[3])
    }

    fn sample_observation(&self, theta: &[f64], x: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let eta: f64 = rng.sample(StandardNormal);
        out[0] = x[0] + theta[3] * eta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::mean_var;
    use crate::models::simulate_dataset;
    use crate::rng::{Purpose, RngStreams};

    #[test]
    fn sample_mean_increment_matches_drift() {
        let bm = BrownianMotion::new();
        let ds = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 100, 3).unwrap();
        let incs: Vec<f64> = (1..ds.len()).map(|t| ds.obs(t)[0] - ds.obs(t - 1)[0]).collect();
        let (m, v) = mean_var(&incs);
        let se = (v / incs.len() as f64).sqrt();
        assert!((m - 0.075).abs() < 3.0 * se, "mean increment {m}, se {se}");
    }

    #[test]
    fn noise_free_limit_is_deterministic_line() {
        let bm = BrownianMotion::new();
        let ds = simulate_dataset(&bm, &[1.0, 1.2, 1e-6, 1e-6], 100, 9).unwrap();
        for t in 0..ds.len() {
            let expected = 1.0 + 1.2 * (t + 1) as f64;
            assert!((ds.obs(t)[0] - expected).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_residual_observation_density() {
        let bm = BrownianMotion::new();
        let lg = bm.log_obs_density(&[0.0, 0.0, 1.0, 1.0], &[2.5], &[2.5]);
        assert!((lg + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn vanishing_noise_transition() {
        let bm = BrownianMotion::new();
        let mut rng = RngStreams::new(1).stream(Purpose::Simulate, 0, 0);
        let mut out = [0.0];
        bm.sample_transition(&[0.0, 1.2, 1e-9, 1.0], &[4.0], &mut rng, &mut out);
        assert!((out[0] - (4.0 + 1.2)).abs() < 1e-6);
    }

    #[test]
    fn initial_state_mean() {
        let bm = BrownianMotion::new();
        let theta = [1.0, 1.2, 1.5, 1.0];
        let mut rng = RngStreams::new(2).stream(Purpose::Simulate, 0, 0);
        let mut out = [0.0];
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                bm.sample_initial_state(&theta, &mut rng, &mut out);
                out[0]
            })
            .collect();
        let (m, v) = mean_var(&draws);
        let se = (v / draws.len() as f64).sqrt();
        assert!((m - 1.075).abs() < 3.0 * se);
        // degenerate initial variance gives a constant draw
        bm.sample_initial_state(&[1.0, 1.2, 0.0, 1.0], &mut rng, &mut out);
        assert_eq!(out[0], 2.2);
    }

    #[test]
    fn prior_at_mode_matches_closed_form() {
        let bm = BrownianMotion::new();
        // Normal modes at 3 and 2, half-normals at 0+.
        let theta = [3.0, 2.0, 1e-12, 1e-12];
        let normal_peak = -(5.0f64).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let hn_at_zero = (2.0f64).ln() - (2.0f64).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let expected = 2.0 * normal_peak + 2.0 * hn_at_zero;
        assert!((bm.log_prior(&theta) - expected).abs() < 1e-12);
    }
}
