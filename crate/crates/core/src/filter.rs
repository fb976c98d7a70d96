//! Bootstrap particle filter with adaptive multinomial resampling.
//!
//! The filter keeps only the current-time particles, their normalized weights
//! and the running log-likelihood estimate. Resampling happens before a
//! propagation step whenever the ESS of the current weights is below `Nx / 2`,
//! so the incremental estimate is
//!
//! ```text
//! ln p̂(y_t | y_{1:t-1}) = ln sum_m W_{t-1}^m g(y_t | x_t^m)
//! ```
//!
//! which reduces to `ln (1/Nx) sum_m g(y_t | x_t^m)` after a resampling step.

use rand::Rng;

use crate::models::{Dataset, StateSpaceModel};
use crate::rng::StreamRng;

/// Resampling is triggered when ESS falls below this fraction of `Nx`.
pub const STATE_ESS_FRACTION: f64 = 0.5;

/// Weighted state particles for one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCloud {
    particles: Vec<f64>,
    weights: Vec<f64>,
    log_lik: f64,
    t: usize,
    nx: usize,
    dim: usize,
}

impl StateCloud {
    /// A cloud that has absorbed no observations yet (`t = 0`).
    pub fn empty(nx: usize, dim_state: usize) -> Self {
        assert!(nx >= 1, "a state cloud needs at least one particle");
        Self {
            particles: vec![0.0; nx * dim_state],
            weights: vec![1.0 / nx as f64; nx],
            log_lik: 0.0,
            t: 0,
            nx,
            dim: dim_state,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Number of observations absorbed.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Running `ln p̂(y_{1:t} | theta)`; `-inf` once the cloud is degenerate.
    pub fn log_lik(&self) -> f64 {
        self.log_lik
    }

    pub fn is_degenerate(&self) -> bool {
        self.log_lik == f64::NEG_INFINITY
    }

    pub fn norm_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn particle(&self, m: usize) -> &[f64] {
        &self.particles[m * self.dim..(m + 1) * self.dim]
    }

    pub fn dim_state(&self) -> usize {
        self.dim
    }

    fn mark_degenerate(&mut self) {
        self.log_lik = f64::NEG_INFINITY;
        let u = 1.0 / self.nx as f64;
        self.weights.iter_mut().for_each(|w| *w = u);
    }

    /// Advance by one observation in place; returns the incremental
    /// log-likelihood estimate. Degenerate clouds stay degenerate and return
    /// `-inf` without touching the model.
    pub fn extend<M: StateSpaceModel + ?Sized>(
        &mut self,
        model: &M,
        theta: &[f64],
        y: &[f64],
        rng: &mut StreamRng,
    ) -> f64 {
        if self.is_degenerate() {
            self.t += 1;
            return f64::NEG_INFINITY;
        }
        let (nx, dim) = (self.nx, self.dim);
        let mut next = vec![0.0; nx * dim];
        if self.t == 0 {
            for m in 0..nx {
                model.sample_initial_state(theta, rng, &mut next[m * dim..(m + 1) * dim]);
            }
        } else {
            let resampled = ess(&self.weights) < STATE_ESS_FRACTION * nx as f64;
            if resampled {
                let idx = multinomial_resample(&self.weights, nx, rng);
                let u = 1.0 / nx as f64;
                self.weights.iter_mut().for_each(|w| *w = u);
                for (m, &i) in idx.iter().enumerate() {
                    let src = &self.particles[i * dim..(i + 1) * dim];
                    model.sample_transition(theta, src, rng, &mut next[m * dim..(m + 1) * dim]);
                }
            } else {
                for m in 0..nx {
                    let src = &self.particles[m * dim..(m + 1) * dim];
                    model.sample_transition(theta, src, rng, &mut next[m * dim..(m + 1) * dim]);
                }
            }
        }
        self.particles = next;
        self.t += 1;

        let log_g: Vec<f64> = (0..nx)
            .map(|m| {
                let lg = model.log_obs_density(theta, &self.particles[m * dim..(m + 1) * dim], y);
                if lg.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    lg
                }
            })
            .collect();
        // Shift by the largest density among particles that still carry weight.
        let max = log_g
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&lg, _)| lg)
            .fold(f64::NEG_INFINITY, f64::max);
        if max.is_infinite() {
            self.mark_degenerate();
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        for (w, &lg) in self.weights.iter_mut().zip(&log_g) {
            *w *= (lg - max).exp();
            total += *w;
        }
        if !(total > 0.0 && total.is_finite()) {
            self.mark_degenerate();
            return f64::NEG_INFINITY;
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
        let incr = max + total.ln();
        self.log_lik += incr;
        incr
    }
}

/// Result of a full filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct PfOutput {
    pub cloud: StateCloud,
    pub log_lik: f64,
    /// Observation-density evaluations performed (`Nx x t` unless the cloud
    /// degenerated early).
    pub ll_count: u64,
}

/// Run the bootstrap filter over `y_{1:t_end}` with `nx` particles.
///
/// # Panics
/// If `nx == 0` or `t_end` exceeds the dataset length.
pub fn run_filter<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    t_end: usize,
    nx: usize,
    rng: &mut StreamRng,
) -> PfOutput {
    assert!(t_end <= data.len(), "t_end {t_end} exceeds T = {}", data.len());
    let mut cloud = StateCloud::empty(nx, model.spec().dim_state);
    let mut ll_count = 0u64;
    for t in 0..t_end {
        cloud.extend(model, theta, data.obs(t), rng);
        if cloud.is_degenerate() {
            ll_count += nx as u64;
            cloud.t = t_end;
            break;
        }
        ll_count += nx as u64;
    }
    let log_lik = cloud.log_lik;
    PfOutput { cloud, log_lik, ll_count }
}

/// Advance a cloud by one observation, returning the new cloud and
/// `ln p̂(y_d | y_{1:d-1}, theta)`.
pub fn extend_filter<M: StateSpaceModel + ?Sized>(
    mut cloud: StateCloud,
    model: &M,
    theta: &[f64],
    y_next: &[f64],
    rng: &mut StreamRng,
) -> (StateCloud, f64) {
    let incr = cloud.extend(model, theta, y_next, rng);
    (cloud, incr)
}

/// Effective sample size `1 / sum w_i^2` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    crate::math::ess(weights)
}

/// Draw `n_out` i.i.d. indices from the (not necessarily normalized)
/// non-negative `weights`. All-zero weights fall back to uniform draws.
pub fn multinomial_resample<R: Rng + ?Sized>(weights: &[f64], n_out: usize, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    assert!(n > 0, "cannot resample from an empty set");
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in weights {
        acc += w.max(0.0);
        cum.push(acc);
    }
    if !(acc > 0.0 && acc.is_finite()) {
        return (0..n_out).map(|_| rng.random_range(0..n)).collect();
    }
    (0..n_out)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            // First index whose cumulative weight exceeds u; skips zero-weight entries.
            cum.partition_point(|&c| c <= u).min(n - 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::ConstantObservation;
    use crate::models::{simulate_dataset, BrownianMotion};
    use crate::rng::{Purpose, RngStreams};

    fn rng(i: u64) -> StreamRng {
        RngStreams::new(99).stream(Purpose::InitialFilter, 0, i)
    }

    #[test]
    fn constant_density_gives_exact_likelihood() {
        let model = ConstantObservation::new(-1.7);
        let data = Dataset::new(vec![0.0; 12], 1, "stub");
        let out = run_filter(&model, &[0.0], &data, 12, 25, &mut rng(0));
        assert!((out.log_lik - 12.0 * -1.7).abs() < 1e-12);
        assert_eq!(out.ll_count, 12 * 25);
        let (_, incr) = extend_filter(StateCloud::empty(5, 1), &model, &[0.0], &[0.0], &mut rng(1));
        assert!((incr + 1.7).abs() < 1e-12);
    }

    #[test]
    fn single_particle_is_trajectory_likelihood() {
        let bm = BrownianMotion::new();
        let theta = [1.0, 1.2, 1.5, 1.0];
        let data = simulate_dataset(&bm, &theta, 15, 1).unwrap();
        let out = run_filter(&bm, &theta, &data, 15, 1, &mut rng(2));

        // Replay the same stream by hand: one particle never resamples.
        let mut r = rng(2);
        let mut x = [0.0];
        let mut xn = [0.0];
        let mut ll = 0.0;
        bm.sample_initial_state(&theta, &mut r, &mut x);
        for t in 0..15 {
            if t > 0 {
                bm.sample_transition(&theta, &x, &mut r, &mut xn);
                x = xn;
            }
            ll += bm.log_obs_density(&theta, &x, data.obs(t));
        }
        assert!((out.log_lik - ll).abs() < 1e-10);
    }

    #[test]
    fn extend_reproduces_run_bit_for_bit() {
        let bm = BrownianMotion::new();
        let theta = [1.0, 1.2, 1.5, 1.0];
        let data = simulate_dataset(&bm, &theta, 30, 2).unwrap();
        let full = run_filter(&bm, &theta, &data, 30, 40, &mut rng(3));
        let mut r = rng(3);
        let mut cloud = StateCloud::empty(40, 1);
        let mut sum = 0.0;
        for t in 0..30 {
            let (c, incr) = extend_filter(cloud, &bm, &theta, data.obs(t), &mut r);
            cloud = c;
            sum += incr;
        }
        assert_eq!(cloud, full.cloud);
        assert_eq!(cloud.log_lik(), full.log_lik);
        assert!((sum - full.log_lik).abs() < 1e-9);
    }

    #[test]
    fn weights_stay_normalized() {
        let bm = BrownianMotion::new();
        let theta = [1.0, 1.2, 1.5, 0.3];
        let data = simulate_dataset(&bm, &theta, 40, 5).unwrap();
        let mut r = rng(4);
        let mut cloud = StateCloud::empty(64, 1);
        for t in 0..40 {
            cloud.extend(&bm, &theta, data.obs(t), &mut r);
            let s: f64 = cloud.norm_weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
            assert!(cloud.norm_weights().iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn impossible_observation_degenerates() {
        let model = ConstantObservation::new(f64::NEG_INFINITY);
        let data = Dataset::new(vec![0.0; 5], 1, "stub");
        let out = run_filter(&model, &[0.0], &data, 5, 10, &mut rng(5));
        assert_eq!(out.log_lik, f64::NEG_INFINITY);
        assert!(out.cloud.is_degenerate());
        let (c, incr) = extend_filter(out.cloud, &model, &[0.0], &[0.0], &mut rng(6));
        assert!(c.is_degenerate());
        assert_eq!(incr, f64::NEG_INFINITY);
    }

    #[test]
    fn very_low_densities_do_not_produce_nan() {
        let model = ConstantObservation::new(-700.0);
        let data = Dataset::new(vec![0.0; 50], 1, "stub");
        let out = run_filter(&model, &[0.0], &data, 50, 20, &mut rng(7));
        assert!((out.log_lik + 35_000.0).abs() < 1e-6);
        // BM with a huge residual: each density is near -5e5.
        let bm = BrownianMotion::new();
        let far = Dataset::new(vec![1000.0; 3], 1, "far");
        let out = run_filter(&bm, &[0.0, 0.0, 0.5, 1.0], &far, 3, 50, &mut rng(8));
        assert!(out.log_lik.is_finite());
    }

    #[test]
    fn resample_point_mass() {
        let idx = multinomial_resample(&[1.0, 0.0, 0.0], 100, &mut rng(9));
        assert!(idx.iter().all(|&i| i == 0));
        let idx = multinomial_resample(&[0.0, 0.0, 2.0], 7, &mut rng(10));
        assert_eq!(idx, vec![2; 7]);
    }

    #[test]
    fn resample_output_size_may_differ() {
        let idx = multinomial_resample(&[0.2, 0.3, 0.5], 11, &mut rng(11));
        assert_eq!(idx.len(), 11);
        assert!(idx.iter().all(|&i| i < 3));
    }
}
