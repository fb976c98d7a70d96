//! Full-covariance Gaussian mixtures fitted by weighted EM. Used as the
//! reference distribution when a run is reinitialised.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::filter::multinomial_resample;
use crate::math::{cholesky_jittered, log_sum_exp, weighted_covariance, weighted_mean};
use crate::rng::StreamRng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Ridge added to every fitted covariance.
const REG_COVAR: f64 = 1e-6;
const MIN_COMPONENT_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Component {
    fn new(weight: f64, mean: DVector<f64>, cov: &DMatrix<f64>, jitter: f64) -> Option<Self> {
        let chol = cov.clone().cholesky().map(|c| c.l()).or_else(|| {
            let (l, _) = cholesky_jittered(cov, jitter);
            Some(l)
        })?;
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() || !(weight > 0.0) {
            return None;
        }
        Some(Self { log_weight: weight.ln(), mean, chol, log_det })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        -0.5 * (d as f64 * LN_2PI + self.log_det + z.norm_squared())
    }
}

/// A finite mixture of multivariate normals.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.log_weight.exp()).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.iter().copied().collect()).collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self.components.iter().map(|c| c.log_weight + c.log_density(x)).collect();
        log_sum_exp(&terms)
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let w = self.weights();
        let k = multinomial_resample(&w, 1, rng)[0];
        let c = &self.components[k];
        let d = c.mean.len();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&c.mean + &c.chol * z).iter().copied().collect()
    }

    /// Single Gaussian matching the weighted mean and covariance, with
    /// `jitter * I` added if the covariance is singular.
    pub fn moment_matched(rows: &[&[f64]], weights: &[f64], jitter: f64) -> Self {
        let mean = DVector::from_vec(weighted_mean(rows, weights));
        let cov = weighted_covariance(rows, weights);
        let (chol, _) = cholesky_jittered(&cov, jitter);
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Self { components: vec![Component { log_weight: 0.0, mean, chol, log_det }] }
    }

    /// Fit `k` components to weighted rows by EM. Falls back to
    /// [`GaussianMixture::moment_matched`] when the sample is too small or
    /// (near-)singular, or when the fit collapses a component.
    pub fn fit(rows: &[&[f64]], weights: &[f64], k: usize, max_iter: usize, rng: &mut StreamRng) -> Self {
        let fallback = || Self::moment_matched(rows, weights, 1e-9);
        let n = rows.len();
        if n == 0 {
            panic!("cannot fit a mixture to an empty sample");
        }
        let d = rows[0].len();
        let total: f64 = weights.iter().sum();
        let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
        let n_eff = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
        if k <= 1 || n_eff < (k * (d + 1)) as f64 {
            return fallback();
        }
        let global_cov = weighted_covariance(rows, &w);
        let min_eig = global_cov.clone().symmetric_eigen().eigenvalues.min();
        if !(min_eig > 1e-12) {
            return fallback();
        }

        // Farthest-point seeding: one random draw, then the points farthest
        // from the seeds chosen so far. Shared global covariance.
        let mut init = multinomial_resample(&w, 1, rng);
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        while init.len() < k {
            let far = (0..n)
                .filter(|&i| w[i] > 0.0)
                .max_by(|&a, &b| {
                    let da = init.iter().map(|&s| dist(rows[a], rows[s])).fold(f64::INFINITY, f64::min);
                    let db = init.iter().map(|&s| dist(rows[b], rows[s])).fold(f64::INFINITY, f64::min);
                    da.total_cmp(&db)
                })
                .expect("positive-weight rows exist");
            init.push(far);
        }
        let mut comps: Vec<Component> = Vec::with_capacity(k);
        for &i in &init {
            match Component::new(1.0 / k as f64, DVector::from_column_slice(rows[i]), &global_cov, REG_COVAR) {
                Some(c) => comps.push(c),
                None => return fallback(),
            }
        }

        let mut resp = vec![0.0; n * k];
        let mut prev_ll = f64::NEG_INFINITY;
        for _ in 0..max_iter {
            // E step
            let mut ll = 0.0;
            for i in 0..n {
                let terms: Vec<f64> = comps.iter().map(|c| c.log_weight + c.log_density(rows[i])).collect();
                let lse = log_sum_exp(&terms);
                if !lse.is_finite() {
                    return fallback();
                }
                ll += w[i] * lse;
                for j in 0..k {
                    resp[i * k + j] = (terms[j] - lse).exp();
                }
            }
            // M step
            let mut next = Vec::with_capacity(k);
            for j in 0..k {
                let rw: Vec<f64> = (0..n).map(|i| w[i] * resp[i * k + j]).collect();
                let mass: f64 = rw.iter().sum();
                if !(mass > MIN_COMPONENT_WEIGHT) {
                    return fallback();
                }
                let mean = DVector::from_vec(weighted_mean(rows, &rw));
                let mut cov = weighted_covariance(rows, &rw);
                for a in 0..d {
                    cov[(a, a)] += REG_COVAR;
                }
                match Component::new(mass, mean, &cov, REG_COVAR) {
                    Some(c) => next.push(c),
                    None => return fallback(),
                }
            }
            comps = next;
            if (ll - prev_ll).abs() < 1e-8 * (1.0 + ll.abs()) {
                break;
            }
            prev_ll = ll;
        }
        Self { components: comps }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStreams};

    fn rng(i: u64) -> StreamRng {
        RngStreams::new(3).stream(Purpose::Mixture, 0, i)
    }

    #[test]
    fn single_component_density_matches_normal() {
        let rows: Vec<Vec<f64>> = vec![vec![-1.0], vec![1.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let g = GaussianMixture::moment_matched(&refs, &[0.5, 0.5], 1e-9);
        // mean 0, variance 1
        let expected = -0.5 * LN_2PI - 0.5 * 0.25;
        assert!((g.log_density(&[0.5]) - expected).abs() < 1e-12);
    }

    #[test]
    fn point_mass_falls_back_and_samples_tightly() {
        let rows = vec![vec![2.0, -1.0]; 50];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let g = GaussianMixture::fit(&refs, &[1.0; 50], 3, 100, &mut rng(0));
        assert_eq!(g.n_components(), 1);
        let mut r = rng(1);
        for _ in 0..20 {
            let x = g.sample(&mut r);
            assert!((x[0] - 2.0).abs() < 1e-3 && (x[1] + 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn recovers_separated_clusters() {
        let mut r = rng(2);
        let centers = [-10.0, 0.0, 10.0];
        let rows: Vec<Vec<f64>> = (0..900)
            .map(|i| vec![centers[i % 3] + r.sample::<f64, _>(StandardNormal)])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let g = GaussianMixture::fit(&refs, &vec![1.0; 900], 3, 200, &mut rng(3));
        let mut means: Vec<f64> = g.means().into_iter().map(|m| m[0]).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (m, c) in means.iter().zip(centers) {
            assert!((m - c).abs() < 0.3, "{means:?}");
        }
        for w in g.weights() {
            assert!((w - 1.0 / 3.0).abs() < 0.05);
        }
    }

    #[test]
    fn density_integrates_to_one_in_1d() {
        let mut r = rng(4);
        let rows: Vec<Vec<f64>> = (0..300).map(|i| vec![(i % 2) as f64 * 4.0 + r.sample::<f64, _>(StandardNormal)]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let g = GaussianMixture::fit(&refs, &vec![1.0; 300], 3, 200, &mut rng(5));
        let h = 0.01;
        let integral: f64 = (-2000..2600).map(|i| g.log_density(&[i as f64 * h]).exp() * h).sum();
        assert!((integral - 1.0).abs() < 1e-4, "{integral}");
    }
}
