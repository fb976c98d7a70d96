//! State-space models: parameter transforms, priors, the model contract and
//! the four benchmark models.
//!
//! A model is described by a [`ModelSpec`] (parameter names, transforms and
//! priors) and implements [`StateSpaceModel`] for the three densities the
//! bootstrap filter needs: the initial state, the transition (simulation
//! only) and the observation density (evaluation and simulation).

mod bm;
mod dataset;
mod ricker;
mod sv;
mod theta_logistic;
pub mod testing;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

pub use bm::BrownianMotion;
pub use dataset::Dataset;
pub use ricker::Ricker;
pub use sv::StochasticVolatility;
pub use theta_logistic::ThetaLogistic;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Bijection between a constrained parameter and the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Identity,
    /// `u = ln(theta)`, for strictly positive parameters.
    Log,
    /// `u = ln((theta - lo) / (hi - theta))`.
    Logit { lo: f64, hi: f64 },
}

impl Transform {
    pub fn forward(&self, theta: f64) -> f64 {
        match *self {
            Transform::Identity => theta,
            Transform::Log => theta.ln(),
            Transform::Logit { lo, hi } => ((theta - lo) / (hi - theta)).ln(),
        }
    }

    pub fn inverse(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit { lo, hi } => lo + (hi - lo) / (1.0 + (-u).exp()),
        }
    }

    /// `ln |d theta / d u|` evaluated at `u`.
    pub fn log_jacobian(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::Log => u,
            Transform::Logit { lo, hi } => (hi - lo).ln() - softplus(u) - softplus(-u),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Univariate prior on a constrained parameter. Second moments are given as
/// standard deviations / scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    HalfNormal { scale: f64 },
    Exponential { rate: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Half-normal prior placed on `exp(x)`; the density of `x` includes the
    /// Jacobian `exp(x)`.
    HalfNormalOfExp { scale: f64 },
    /// Point mass, used to pin parameters in experiments.
    Fixed { value: f64 },
}

impl Prior {
    pub fn log_density(&self, x: f64) -> f64 {
        if !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        match *self {
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - LN_SQRT_2PI
            }
            Prior::HalfNormal { scale } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = x / scale;
                std::f64::consts::LN_2 - 0.5 * z * z - scale.ln() - LN_SQRT_2PI
            }
            Prior::Exponential { rate } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                rate.ln() - rate * x
            }
            Prior::Uniform { lo, hi } => {
                if x < lo || x > hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            Prior::HalfNormalOfExp { scale } => {
                Prior::HalfNormal { scale }.log_density(x.exp()) + x
            }
            Prior::Fixed { value } => {
                if x == value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Prior::HalfNormal { scale } => (scale * rng.sample::<f64, _>(StandardNormal)).abs(),
            Prior::Exponential { rate } => Exp::new(rate).expect("positive rate").sample(rng),
            Prior::Uniform { lo, hi } => rng.random_range(lo..hi),
            Prior::HalfNormalOfExp { scale } => {
                (scale * rng.sample::<f64, _>(StandardNormal)).abs().ln()
            }
            Prior::Fixed { value } => value,
        }
    }
}

/// Static description of a model's parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub id: &'static str,
    pub param_names: Vec<&'static str>,
    pub dim_state: usize,
    pub dim_obs: usize,
    pub transforms: Vec<Transform>,
    pub priors: Vec<Prior>,
}

impl ModelSpec {
    pub fn dim_theta(&self) -> usize {
        self.param_names.len()
    }

    pub fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.transforms)
            .map(|(&t, tr)| tr.forward(t))
            .collect()
    }

    pub fn to_constrained(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.transforms)
            .map(|(&x, tr)| tr.inverse(x))
            .collect()
    }

    /// Prior log-density of a constrained parameter vector.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim_theta());
        theta
            .iter()
            .zip(&self.priors)
            .map(|(&t, p)| p.log_density(t))
            .sum()
    }

    /// Prior log-density of the unconstrained vector `u`, including the
    /// Jacobian of the inverse transform.
    pub fn log_prior_unconstrained(&self, u: &[f64]) -> f64 {
        let mut lp = 0.0;
        for ((&x, tr), p) in u.iter().zip(&self.transforms).zip(&self.priors) {
            let theta = tr.inverse(x);
            lp += p.log_density(theta) + tr.log_jacobian(x);
            if lp == f64::NEG_INFINITY {
                break;
            }
        }
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    }

    pub fn in_support(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim_theta() && self.log_prior(theta).is_finite()
    }

    /// One prior draw (constrained scale).
    pub fn sample_prior(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.priors.iter().map(|p| p.sample(rng)).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| *n == name)
    }
}

/// A state-space model usable by the bootstrap particle filter.
///
/// All methods are pure given the RNG handle and may be called concurrently.
/// States are fixed-width slices of length `spec().dim_state`.
pub trait StateSpaceModel: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    /// Draw `x_1` given `theta`.
    fn sample_initial_state(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]);

    /// Draw `x_t ~ f(. | x_{t-1}, theta)`.
    fn sample_transition(&self, theta: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]);

    /// `ln g(y_t | x_t, theta)`; `-inf` encodes an impossible observation.
    fn log_obs_density(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64;

    /// Draw `y_t ~ g(. | x_t, theta)`.
    fn sample_observation(&self, theta: &[f64], x: &[f64], rng: &mut StreamRng, out: &mut [f64]);

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.spec().log_prior(theta)
    }
}

impl<M: StateSpaceModel + ?Sized> StateSpaceModel for Box<M> {
    fn spec(&self) -> &ModelSpec {
        (**self).spec()
    }
    fn sample_initial_state(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        (**self).sample_initial_state(theta, rng, out)
    }
    fn sample_transition(&self, theta: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        (**self).sample_transition(theta, x_prev, rng, out)
    }
    fn log_obs_density(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        (**self).log_obs_density(theta, x, y)
    }
    fn sample_observation(&self, theta: &[f64], x: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        (**self).sample_observation(theta, x, rng, out)
    }
}

/// Gaussian log-density `ln N(y; mean, var)`.
#[inline]
pub fn normal_log_density(y: f64, mean: f64, var: f64) -> f64 {
    let r = y - mean;
    -0.5 * (r * r / var + (2.0 * PI * var).ln())
}

/// Simulate `T` observations from the generative model at `theta`.
/// Deterministic given `seed`.
pub fn simulate_dataset<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &[f64],
    t_len: usize,
    seed: u64,
) -> Result<Dataset> {
    let spec = model.spec();
    if !spec.in_support(theta) {
        return Err(Error::domain(format!(
            "theta {theta:?} outside the prior support of model '{}'",
            spec.id
        )));
    }
    if t_len == 0 {
        return Err(Error::domain("simulated dataset needs T >= 1"));
    }
    let mut rng = crate::rng::RngStreams::new(seed).stream(crate::rng::Purpose::Simulate, 0, 0);
    let mut x = vec![0.0; spec.dim_state];
    let mut x_next = vec![0.0; spec.dim_state];
    let mut y = vec![0.0; spec.dim_obs * t_len];
    model.sample_initial_state(theta, &mut rng, &mut x);
    for t in 0..t_len {
        if t > 0 {
            model.sample_transition(theta, &x, &mut rng, &mut x_next);
            std::mem::swap(&mut x, &mut x_next);
        }
        model.sample_observation(theta, &x, &mut rng, &mut y[t * spec.dim_obs..(t + 1) * spec.dim_obs]);
    }
    Ok(Dataset::new(y, spec.dim_obs, format!("synthetic:{}:seed={seed}", spec.id)))
}

/// Model ids understood by [`model_by_id`].
pub const MODEL_IDS: [&str; 4] = ["bm", "sv1f", "theta-logistic", "ricker"];

pub fn model_by_id(id: &str) -> Result<Box<dyn StateSpaceModel>> {
    Ok(match id {
        "bm" => Box::new(BrownianMotion::new()),
        "sv1f" => Box::new(StochasticVolatility::new()),
        "theta-logistic" => Box::new(ThetaLogistic::new()),
        "ricker" => Box::new(Ricker::new()),
        other => {
            return Err(Error::config(format!(
                "unknown model '{other}' (expected one of {MODEL_IDS:?})"
            )))
        }
    })
}

/// Data-generating parameters and series length used for the synthetic
/// benchmark datasets.
pub fn default_truth(id: &str) -> Result<(Vec<f64>, usize)> {
    Ok(match id {
        "bm" => (vec![1.0, 1.2, 1.5, 1.0], 100),
        "sv1f" => (vec![4.0, 4.0, 0.5, 5.0, 0.0], 200),
        "theta-logistic" => (ThetaLogistic::synthetic_truth(), 100),
        "ricker" => (vec![10f64.ln(), 44.7f64.ln(), 0.6f64.ln()], 700),
        other => return Err(Error::config(format!("unknown model '{other}'"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStreams};
    use proptest::prelude::*;

    fn all_models() -> Vec<Box<dyn StateSpaceModel>> {
        MODEL_IDS.iter().map(|id| model_by_id(id).unwrap()).collect()
    }

    #[test]
    fn transform_round_trip_on_prior_draws() {
        let streams = RngStreams::new(11);
        for model in all_models() {
            let spec = model.spec();
            let mut rng = streams.stream(Purpose::Prior, 0, 0);
            for _ in 0..100 {
                let theta = spec.sample_prior(&mut rng);
                let back = spec.to_constrained(&spec.to_unconstrained(&theta));
                for (a, b) in theta.iter().zip(&back) {
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "{}: {a} vs {b}", spec.id);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn logit_round_trip(theta in 0.001f64..0.999, lo in -5.0f64..0.0, width in 0.5f64..10.0) {
            let tr = Transform::Logit { lo, hi: lo + width };
            let x = lo + theta * width;
            let back = tr.inverse(tr.forward(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn log_jacobian_matches_finite_difference(u in -4.0f64..4.0) {
            for tr in [Transform::Log, Transform::Logit { lo: -1.0, hi: 3.0 }] {
                let h = 1e-6;
                let fd = (tr.inverse(u + h) - tr.inverse(u - h)) / (2.0 * h);
                prop_assert!((tr.log_jacobian(u) - fd.ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn prior_is_finite_inside_and_neg_inf_outside() {
        assert!(Prior::HalfNormal { scale: 2.0 }.log_density(1.0).is_finite());
        assert_eq!(Prior::HalfNormal { scale: 2.0 }.log_density(-1.0), f64::NEG_INFINITY);
        assert_eq!(Prior::Exponential { rate: 1.0 }.log_density(-0.1), f64::NEG_INFINITY);
        assert_eq!(Prior::Uniform { lo: 0.0, hi: 1.0 }.log_density(1.5), f64::NEG_INFINITY);
        assert_eq!(Prior::Normal { mean: 0.0, sd: 1.0 }.log_density(f64::NAN), f64::NEG_INFINITY);
    }

    #[test]
    fn unconstrained_prior_integrates_jacobian() {
        // Exponential(1) on theta = exp(u): density of u is exp(u - exp(u)).
        let spec = ModelSpec {
            id: "t",
            param_names: vec!["a"],
            dim_state: 1,
            dim_obs: 1,
            transforms: vec![Transform::Log],
            priors: vec![Prior::Exponential { rate: 1.0 }],
        };
        for u in [-2.0, 0.0, 1.5] {
            let expected = u - f64::exp(u);
            assert!((spec.log_prior_unconstrained(&[u]) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn prior_predictive_paths_have_finite_density() {
        let streams = RngStreams::new(5);
        for model in all_models() {
            let spec = model.spec().clone();
            let (theta, _) = default_truth(spec.id).unwrap();
            let mut rng = streams.stream(Purpose::Simulate, 1, 0);
            let mut x = vec![0.0; spec.dim_state];
            let mut xn = vec![0.0; spec.dim_state];
            let mut y = vec![0.0; spec.dim_obs];
            model.sample_initial_state(&theta, &mut rng, &mut x);
            for t in 0..50 {
                if t > 0 {
                    model.sample_transition(&theta, &x, &mut rng, &mut xn);
                    std::mem::swap(&mut x, &mut xn);
                }
                model.sample_observation(&theta, &x, &mut rng, &mut y);
                let lg = model.log_obs_density(&theta, &x, &y);
                assert!(lg.is_finite(), "{} t={t} lg={lg}", spec.id);
            }
        }
    }

    #[test]
    fn simulate_rejects_out_of_support_theta() {
        let bm = BrownianMotion::new();
        let err = simulate_dataset(&bm, &[1.0, 1.2, -1.5, 1.0], 10, 0).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 0, 0).is_err());
    }

    #[test]
    fn unknown_model_id_is_config_error() {
        assert!(matches!(model_by_id("arima").err(), Some(Error::Config(_))));
    }
}
