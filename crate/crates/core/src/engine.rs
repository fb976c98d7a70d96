//! The SMC² driver in its two flavors.
//!
//! Density tempering targets `p(theta) p̂(y_{1:T} | theta)^g` for an adaptive
//! sequence `0 = g_0 < ... < g_D = 1`, resampling and mutating at every
//! stage. Data annealing adds one observation per stage by extending each
//! particle's state cloud and runs a resample-move step whenever the ESS of
//! the parameter weights drops below `0.6 * N_theta`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::adapt::{self, AdaptPolicy, MutationOutcome};
use crate::error::{Error, Result};
use crate::filter::{multinomial_resample, run_filter};
use crate::math::{ess_from_log, log_sum_exp, weights_from_log};
use crate::mixture::GaussianMixture;
use crate::models::{Dataset, StateSpaceModel};
use crate::pmmh::{mutation_sweep, scaled, MutationReport, PreparedProposal, Target, ThetaParticle};
use crate::rng::{Purpose, RngStreams};

/// Fraction of `N_theta` the parameter ESS is kept above.
pub const THETA_ESS_FRACTION: f64 = 0.6;
/// Bisection tolerance on the temperature.
pub const TEMPERATURE_TOL: f64 = 1e-6;
const MAX_BISECTIONS: usize = 100;
/// Temperature step taken when no larger temperature reaches the ESS target.
const FALLBACK_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Flavor {
    #[serde(rename = "dt")]
    DensityTempering,
    #[serde(rename = "da")]
    DataAnnealing,
}

impl FromStr for Flavor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" | "density-tempering" => Ok(Flavor::DensityTempering),
            "da" | "data-annealing" => Ok(Flavor::DataAnnealing),
            other => Err(Error::config(format!("unknown flavor '{other}' (expected dt or da)"))),
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flavor::DensityTempering => "dt",
            Flavor::DataAnnealing => "da",
        })
    }
}

/// Everything `run_smc2` needs besides the model and data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub flavor: Flavor,
    pub n_theta: usize,
    pub nx0: usize,
    pub seed: u64,
    pub policy: AdaptPolicy,
    /// Fill `wall_ms` in the trace. Off by default so traces are reproducible.
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn new(flavor: Flavor, n_theta: usize, nx0: usize, seed: u64, policy: AdaptPolicy) -> Self {
        Self { flavor, n_theta, nx0, seed, policy, record_wall_time: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 2 {
            return Err(Error::config("n_theta must be at least 2"));
        }
        if self.nx0 == 0 {
            return Err(Error::config("nx0 must be at least 1"));
        }
        self.policy.validate()
    }
}

/// Per-stage diagnostics, one row of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub d: usize,
    pub g_d: f64,
    #[serde(rename = "Nx")]
    pub nx: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub esjd: f64,
    /// ESS after reweighting, before any resampling.
    pub ess: f64,
    pub tll: u64,
    pub wall_ms: u64,
}

/// One adaptation decision, reported in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptEvent {
    pub d: usize,
    pub g_d: f64,
    /// `low-esjd` or `high-esjd`.
    pub trigger: &'static str,
    pub esjd_prev: f64,
    pub nx_before: usize,
    pub sigma2_hat: Option<f64>,
    pub candidates: Vec<usize>,
    /// Estimated variances (NOVEL-VAR) or scores `1 / (Nx R)` (NOVEL-ESJD).
    pub candidate_scores: Vec<f64>,
    pub chosen_nx: usize,
    #[serde(rename = "R")]
    pub r: usize,
    /// Stage-3 action taken: `none`, `replace`, `reweight` or `reinit`.
    pub action: &'static str,
}

/// The SMC² particle system plus run bookkeeping.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub particles: Vec<ThetaParticle>,
    /// Normalized log-weights.
    pub log_weights: Vec<f64>,
    pub flavor: Flavor,
    /// Stage index; for data annealing also the number of observations absorbed.
    pub d: usize,
    /// Current temperature (always 1 for data annealing).
    pub g: f64,
    /// Shared number of state particles.
    pub nx: usize,
    /// Total likelihood evaluations so far.
    pub tll: u64,
    /// Sweeps per mutation, carried between stages.
    pub r: usize,
    /// Total ESJD of the last mutation.
    pub esjd_prev: f64,
    pub trace: Vec<StageRecord>,
    pub events: Vec<AdaptEvent>,
    /// Reference distribution after a reinitialisation.
    pub reference: Option<GaussianMixture>,
    pub restarts: usize,
    streams: RngStreams,
    op: u64,
}

impl Ensemble {
    /// Prior sample with empty clouds and uniform weights.
    pub fn from_prior<M: StateSpaceModel + ?Sized>(model: &M, flavor: Flavor, n_theta: usize, nx: usize, seed: u64) -> Self {
        let spec = model.spec();
        let streams = RngStreams::new(seed);
        let particles: Vec<ThetaParticle> = (0..n_theta)
            .map(|n| {
                let mut rng = streams.stream(Purpose::Prior, 0, n as u64);
                ThetaParticle::new(spec, spec.sample_prior(&mut rng), nx)
            })
            .collect();
        Self {
            particles,
            log_weights: vec![-(n_theta as f64).ln(); n_theta],
            flavor,
            d: 0,
            g: match flavor {
                Flavor::DensityTempering => 0.0,
                Flavor::DataAnnealing => 1.0,
            },
            nx,
            tll: 0,
            r: 1,
            esjd_prev: 0.0,
            trace: Vec::new(),
            events: Vec::new(),
            reference: None,
            restarts: 0,
            streams,
            op: 1,
        }
    }

    pub fn n_theta(&self) -> usize {
        self.particles.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        weights_from_log(&self.log_weights)
    }

    pub fn ess(&self) -> f64 {
        ess_from_log(&self.log_weights)
    }

    pub fn streams(&self) -> &RngStreams {
        &self.streams
    }

    /// Fresh operation id for keying RNG streams.
    pub fn next_op(&mut self) -> u64 {
        self.op += 1;
        self.op
    }

    /// Number of observations the current target conditions on.
    pub fn t_end(&self, data: &Dataset) -> usize {
        match self.flavor {
            Flavor::DensityTempering => data.len(),
            Flavor::DataAnnealing => self.d,
        }
    }

    pub fn target<'a>(&'a self, data: &'a Dataset) -> Target<'a> {
        Target::new(data, self.t_end(data), self.g).with_reference(self.reference.as_ref())
    }

    /// Renormalize the log-weights. If every weight vanished the weights are
    /// reset to uniform.
    pub fn normalize(&mut self) {
        let total = log_sum_exp(&self.log_weights);
        if total.is_finite() {
            self.log_weights.iter_mut().for_each(|w| *w -= total);
        } else {
            warn!("all parameter weights vanished at stage {}; resetting to uniform", self.d);
            let u = -(self.n_theta() as f64).ln();
            self.log_weights.iter_mut().for_each(|w| *w = u);
        }
    }

    /// Log-likelihood-like quantity whose increments drive tempering:
    /// `ln p̂` alone, or `ln p + ln p̂ - ln Q` under a reference.
    fn tempering_loglik(&self, p: &ThetaParticle) -> f64 {
        if self.reference.is_some() {
            p.log_prior + p.log_lik - p.log_ref
        } else {
            p.log_lik
        }
    }

    /// One PMMH sweep over all particles at the current target.
    pub fn sweep<M: StateSpaceModel + ?Sized>(
        &mut self,
        model: &M,
        data: &Dataset,
        proposal: &PreparedProposal,
    ) -> MutationReport {
        let op = self.next_op();
        let target = Target::new(data, self.t_end(data), self.g).with_reference(self.reference.as_ref());
        let report = mutation_sweep(&mut self.particles, model, &target, proposal, self.nx, &self.streams, op);
        self.tll += report.ll_count;
        report
    }

    /// Posterior mean of each constrained parameter.
    pub fn posterior_mean(&self) -> Vec<f64> {
        let w = self.weights();
        let d = self.particles.first().map_or(0, |p| p.theta.len());
        (0..d)
            .map(|j| self.particles.iter().zip(&w).map(|(p, w)| w * p.theta[j]).sum())
            .collect()
    }

    /// Posterior variance of each constrained parameter.
    pub fn posterior_variance(&self) -> Vec<f64> {
        let w = self.weights();
        let mean = self.posterior_mean();
        (0..mean.len())
            .map(|j| {
                self.particles
                    .iter()
                    .zip(&w)
                    .map(|(p, w)| w * (p.theta[j] - mean[j]).powi(2))
                    .sum()
            })
            .collect()
    }

    /// Weighted mean on the unconstrained scale.
    pub fn unconstrained_mean(&self) -> Vec<f64> {
        let rows: Vec<&[f64]> = self.particles.iter().map(|p| p.u.as_slice()).collect();
        crate::math::weighted_mean(&rows, &self.weights())
    }
}

/// Draw the initial ensemble. Density tempering runs a full-data filter per
/// particle so every particle carries a likelihood estimate from the start;
/// data annealing starts from empty clouds.
pub fn init_ensemble<M: StateSpaceModel + ?Sized>(model: &M, data: &Dataset, config: &RunConfig) -> Result<Ensemble> {
    config.validate()?;
    let mut ens = Ensemble::from_prior(model, config.flavor, config.n_theta, config.nx0, config.seed);
    if ens.particles.iter().any(|p| !p.log_prior.is_finite()) {
        return Err(Error::config("prior sampling produced a point outside the prior support"));
    }
    if config.flavor == Flavor::DensityTempering {
        refresh_clouds(&mut ens, model, data, Purpose::InitialFilter);
    }
    Ok(ens)
}

/// Run a fresh filter with `ens.nx` particles for every particle and install
/// it. Weights are not touched.
pub(crate) fn refresh_clouds<M: StateSpaceModel + ?Sized>(
    ens: &mut Ensemble,
    model: &M,
    data: &Dataset,
    purpose: Purpose,
) -> Vec<f64> {
    let op = ens.next_op();
    let t_end = ens.t_end(data);
    let nx = ens.nx;
    let streams = ens.streams;
    let counts: Vec<(u64, f64)> = ens
        .particles
        .par_iter_mut()
        .enumerate()
        .map(|(n, p)| {
            let old = p.log_lik;
            let mut rng = streams.stream(purpose, op, n as u64);
            let out = run_filter(model, &p.theta, data, t_end, nx, &mut rng);
            p.install_cloud(out.cloud);
            (out.ll_count, old)
        })
        .collect();
    ens.tll += counts.iter().map(|c| c.0).sum::<u64>();
    counts.into_iter().map(|c| c.1).collect()
}

/// Density-tempering reweight: `ln w += (g_new - g) * ln p̂(y_{1:T} | theta)`.
pub fn reweight_dt(ens: &mut Ensemble, g_new: f64) {
    let dg = g_new - ens.g;
    for n in 0..ens.n_theta() {
        let tl = ens.tempering_loglik(&ens.particles[n]);
        ens.log_weights[n] += scaled(dg, tl);
    }
    ens.normalize();
    ens.g = g_new;
}

/// Data-annealing reweight: extend every cloud by `y_{d+1}` and add the
/// incremental log-likelihood to the weight.
pub fn reweight_da<M: StateSpaceModel + ?Sized>(ens: &mut Ensemble, model: &M, data: &Dataset) {
    let t = ens.d;
    assert!(t < data.len(), "all observations already absorbed");
    let y = data.obs(t);
    let op = ens.next_op();
    let streams = ens.streams;
    let results: Vec<(f64, u64)> = ens
        .particles
        .par_iter_mut()
        .enumerate()
        .map(|(n, p)| {
            let nx = p.cloud.nx() as u64;
            let live = !p.cloud.is_degenerate();
            let mut rng = streams.stream(Purpose::Extend, op, n as u64);
            let incr = p.cloud.extend(model, &p.theta, y, &mut rng);
            p.log_lik = p.cloud.log_lik();
            (incr, if live { nx } else { 0 })
        })
        .collect();
    for (lw, (incr, _)) in ens.log_weights.iter_mut().zip(&results) {
        *lw += incr;
    }
    ens.tll += results.iter().map(|r| r.1).sum::<u64>();
    ens.d += 1;
    ens.normalize();
}

/// Conditional ESS of reweighting the current ensemble to temperature `g_new`:
/// `N (sum W_n v_n)^2 / sum W_n v_n^2` with incremental weights `v_n`. Equals
/// the ordinary ESS of the new weights when the current weights are uniform.
pub fn conditional_ess(ens: &Ensemble, g_new: f64) -> f64 {
    let dg = g_new - ens.g;
    let incr: Vec<f64> = ens.particles.iter().map(|p| scaled(dg, ens.tempering_loglik(p))).collect();
    let max = incr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for (lw, v) in ens.log_weights.iter().zip(&incr) {
        let w = lw.exp();
        let e = (v - max).exp();
        s1 += w * e;
        s2 += w * e * e;
    }
    if s2 == 0.0 {
        return 0.0;
    }
    ens.n_theta() as f64 * s1 * s1 / s2
}

/// Largest temperature in `(g, 1]` keeping the (conditional) ESS at or above
/// `0.6 * N_theta`, by bisection.
pub fn next_temperature(ens: &Ensemble) -> f64 {
    let target = THETA_ESS_FRACTION * ens.n_theta() as f64;
    if conditional_ess(ens, 1.0) >= target {
        return 1.0;
    }
    let (mut lo, mut hi) = (ens.g, 1.0);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= TEMPERATURE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if conditional_ess(ens, mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= ens.g {
        let g = (ens.g + FALLBACK_STEP).min(1.0);
        warn!("no temperature above {} reaches the ESS target; stepping to {g}", ens.g);
        g
    } else {
        lo
    }
}

/// Multinomial resampling of parameter particles; clouds are deep-copied and
/// the weights reset to uniform.
pub fn resample_ensemble(ens: &mut Ensemble) {
    let op = ens.next_op();
    let mut rng = ens.streams.stream(Purpose::Resample, op, 0);
    let n = ens.n_theta();
    let idx = multinomial_resample(&ens.weights(), n, &mut rng);
    ens.particles = idx.iter().map(|&i| ens.particles[i].clone()).collect();
    ens.log_weights = vec![-(n as f64).ln(); n];
}

/// Restart the run from a reference mixture `Q` fitted to the current
/// unconstrained sample, with `nx_new` state particles.
fn restart_from_reference<M: StateSpaceModel + ?Sized>(
    ens: &mut Ensemble,
    model: &M,
    data: &Dataset,
    policy: &AdaptPolicy,
    nx_new: usize,
) {
    let op = ens.next_op();
    let spec = model.spec();
    let rows: Vec<&[f64]> = ens.particles.iter().map(|p| p.u.as_slice()).collect();
    let mut fit_rng = ens.streams.stream(Purpose::Mixture, op, 0);
    let q = GaussianMixture::fit(&rows, &ens.weights(), policy.mixture_components, 200, &mut fit_rng);
    let n = ens.n_theta();
    ens.particles = (0..n)
        .map(|i| {
            let mut rng = ens.streams.stream(Purpose::Mixture, op, i as u64 + 1);
            let u = q.sample(&mut rng);
            let theta = spec.to_constrained(&u);
            let mut p = ThetaParticle::new(spec, theta, nx_new);
            // Keep the drawn point exactly; the round trip through theta is lossy.
            p.log_prior = spec.log_prior_unconstrained(&u);
            p.log_ref = q.log_density(&u);
            p.u = u;
            p
        })
        .collect();
    ens.log_weights = vec![-(n as f64).ln(); n];
    ens.nx = nx_new;
    ens.restarts += 1;
    ens.esjd_prev = policy.esjd_target;
    match ens.flavor {
        Flavor::DensityTempering => {
            ens.g = 0.0;
            ens.reference = Some(q);
            refresh_clouds(ens, model, data, Purpose::InitialFilter);
        }
        Flavor::DataAnnealing => {
            // Importance weights p / Q; the annealed targets are unchanged.
            ens.d = 0;
            for (lw, p) in ens.log_weights.iter_mut().zip(&ens.particles) {
                *lw = p.log_prior - p.log_ref;
            }
            for p in ens.particles.iter_mut() {
                p.log_ref = 0.0;
            }
            ens.reference = None;
            ens.normalize();
        }
    }
    info!("reinitialised (restart {}) with Nx = {nx_new}", ens.restarts);
}

/// Run SMC² to completion. The returned ensemble carries the trace and the
/// adaptation events.
pub fn run_smc2<M: StateSpaceModel + ?Sized>(model: &M, data: &Dataset, config: &RunConfig) -> Result<Ensemble> {
    if data.dim_obs() != model.spec().dim_obs {
        return Err(Error::config(format!(
            "dataset has {} observation columns, model '{}' expects {}",
            data.dim_obs(),
            model.spec().id,
            model.spec().dim_obs
        )));
    }
    let start = Instant::now();
    let mut ens = init_ensemble(model, data, config)?;
    let policy = &config.policy;
    let wall = |start: &Instant| {
        if config.record_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    };

    match config.flavor {
        Flavor::DensityTempering => {
            while ens.g < 1.0 {
                let g_new = next_temperature(&ens);
                reweight_dt(&mut ens, g_new);
                let ess = ens.ess();
                resample_ensemble(&mut ens);
                let (r, esjd) = match adapt::adaptive_mutation(&mut ens, model, data, policy)? {
                    MutationOutcome::Mutated { r, esjd } => (r, esjd),
                    MutationOutcome::Restart { nx_new } => {
                        restart_from_reference(&mut ens, model, data, policy, nx_new);
                        (0, 0.0)
                    }
                };
                ens.d += 1;
                ens.trace.push(StageRecord {
                    d: ens.d,
                    g_d: ens.g,
                    nx: ens.nx,
                    r,
                    esjd,
                    ess,
                    tll: ens.tll,
                    wall_ms: wall(&start),
                });
                debug!("stage {} g = {g_new:.6} Nx = {} R = {r} esjd = {esjd:.3}", ens.d, ens.nx);
            }
        }
        Flavor::DataAnnealing => {
            let threshold = THETA_ESS_FRACTION * ens.n_theta() as f64;
            let mut stage = 0;
            while ens.d < data.len() {
                reweight_da(&mut ens, model, data);
                stage += 1;
                let ess = ens.ess();
                let (mut r, mut esjd) = (0, 0.0);
                if ess < threshold {
                    resample_ensemble(&mut ens);
                    match adapt::adaptive_mutation(&mut ens, model, data, policy)? {
                        MutationOutcome::Mutated { r: rr, esjd: e } => {
                            r = rr;
                            esjd = e;
                        }
                        MutationOutcome::Restart { nx_new } => {
                            restart_from_reference(&mut ens, model, data, policy, nx_new);
                        }
                    }
                }
                ens.trace.push(StageRecord {
                    d: stage,
                    g_d: 1.0,
                    nx: ens.nx,
                    r,
                    esjd,
                    ess,
                    tll: ens.tll,
                    wall_ms: wall(&start),
                });
                debug!("stage {stage} d = {} Nx = {} R = {r} ess = {ess:.1}", ens.d, ens.nx);
            }
        }
    }
    info!(
        "finished: {} stages, final Nx = {}, TLL = {}, restarts = {}",
        ens.trace.len(),
        ens.nx,
        ens.tll,
        ens.restarts
    );
    Ok(ens)
}
