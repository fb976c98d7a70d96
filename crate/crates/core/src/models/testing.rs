//! Instrumented and degenerate models for testing the samplers.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{ModelSpec, Prior, StateSpaceModel, Transform};
use crate::rng::StreamRng;

/// Observation density is the constant `exp(log_c)` whatever the state, so
/// every likelihood estimate is exact: `ln p(y_{1:t}) = t * log_c`.
/// One parameter with a standard normal prior; the state is a single zero.
#[derive(Debug, Clone)]
pub struct ConstantObservation {
    spec: ModelSpec,
    pub log_c: f64,
}

impl ConstantObservation {
    pub fn new(log_c: f64) -> Self {
        Self {
            spec: ModelSpec {
                id: "constant",
                param_names: vec!["a"],
                dim_state: 1,
                dim_obs: 1,
                transforms: vec![Transform::Identity],
                priors: vec![Prior::Normal { mean: 0.0, sd: 1.0 }],
            },
            log_c,
        }
    }
}

impl StateSpaceModel for ConstantObservation {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }
    fn sample_initial_state(&self, _: &[f64], _: &mut StreamRng, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn sample_transition(&self, _: &[f64], x_prev: &[f64], _: &mut StreamRng, out: &mut [f64]) {
        out[0] = x_prev[0];
    }
    fn log_obs_density(&self, _: &[f64], _: &[f64], _: &[f64]) -> f64 {
        self.log_c
    }
    fn sample_observation(&self, _: &[f64], _: &[f64], _: &mut StreamRng, out: &mut [f64]) {
        out[0] = 0.0;
    }
}

/// Wraps a model and counts observation-density evaluations, one per
/// (state particle, time step). Used to audit likelihood-evaluation totals.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    evaluations: AtomicU64,
}

impl<M> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, evaluations: AtomicU64::new(0) }
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }
}

impl<M: StateSpaceModel> StateSpaceModel for CountingModel<M> {
    fn spec(&self) -> &ModelSpec {
        self.inner.spec()
    }
    fn sample_initial_state(&self, theta: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        self.inner.sample_initial_state(theta, rng, out)
    }
    fn sample_transition(&self, theta: &[f64], x_prev: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        self.inner.sample_transition(theta, x_prev, rng, out)
    }
    fn log_obs_density(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.inner.log_obs_density(theta, x, y)
    }
    fn sample_observation(&self, theta: &[f64], x: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        self.inner.sample_observation(theta, x, rng, out)
    }
}
