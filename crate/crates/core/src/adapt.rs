//! Adaptation of the number of state particles.
//!
//! Stage 1 decides whether to adapt from the ESJD of the previous mutation.
//! Stage 2 proposes new values of `Nx`; stage 3 swaps the state clouds for
//! ones with the new size. The adaptive mutation drivers then set the number
//! of PMMH sweeps `R` from the ESJD of a first sweep.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;

use crate::engine::{refresh_clouds, AdaptEvent, Ensemble, Flavor};
use crate::error::{Error, Result};
use crate::filter::run_filter;
use crate::math::mean_var;
use crate::models::{Dataset, StateSpaceModel};
use crate::pmmh::{default_proposal, scaled};
use crate::rng::{Purpose, RngStreams, StreamRng};

/// Stand-in for an infinite variance estimate when computing candidates.
pub const INFINITE_VARIANCE_CAP: f64 = 1e4;
const CEIL_TOL: f64 = 1e-9;

/// How the new number of state particles is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage2 {
    /// Keep `Nx` fixed and adapt only `R` (the pre-tuned baseline).
    Fixed,
    Double,
    RescaleVar,
    RescaleStd,
    NovelVar,
    NovelEsjd,
}

/// How the state clouds are exchanged once `Nx` changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage3 {
    Reweight,
    Reinit,
    Replace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    Ceil,
    CeilTo10,
}

impl FromStr for Stage2 {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('_', "-").as_str() {
            "fixed" | "gold-standard" => Stage2::Fixed,
            "double" => Stage2::Double,
            "rescale-var" => Stage2::RescaleVar,
            "rescale-std" => Stage2::RescaleStd,
            "novel-var" => Stage2::NovelVar,
            "novel-esjd" => Stage2::NovelEsjd,
            _ => return Err(Error::config(format!("unknown stage2 strategy '{s}'"))),
        })
    }
}

impl fmt::Display for Stage2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage2::Fixed => "gold-standard",
            Stage2::Double => "double",
            Stage2::RescaleVar => "rescale-var",
            Stage2::RescaleStd => "rescale-std",
            Stage2::NovelVar => "novel-var",
            Stage2::NovelEsjd => "novel-esjd",
        })
    }
}

impl FromStr for Stage3 {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "reweight" => Stage3::Reweight,
            "reinit" => Stage3::Reinit,
            "replace" => Stage3::Replace,
            _ => return Err(Error::config(format!("unknown stage3 scheme '{s}'"))),
        })
    }
}

impl fmt::Display for Stage3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage3::Reweight => "reweight",
            Stage3::Reinit => "reinit",
            Stage3::Replace => "replace",
        })
    }
}

impl FromStr for Rounding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "ceil" => Ok(Rounding::Ceil),
            "ceil-to-10" => Ok(Rounding::CeilTo10),
            _ => Err(Error::config(format!("unknown rounding mode '{s}'"))),
        }
    }
}

impl Rounding {
    pub fn apply(self, x: f64) -> usize {
        match self {
            Rounding::Ceil => (x - CEIL_TOL).ceil().max(0.0) as usize,
            Rounding::CeilTo10 => ((x / 10.0 - CEIL_TOL).ceil().max(0.0) * 10.0) as usize,
        }
    }
}

/// Strategy selection and tuning constants.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptPolicy {
    pub stage2: Stage2,
    pub stage3: Stage3,
    pub esjd_target: f64,
    /// Filter runs per variance estimate.
    pub k: usize,
    pub nx_min: usize,
    pub nx_max: usize,
    pub var_target_base: f64,
    pub var_min_base: f64,
    pub var_max_base: f64,
    /// Tempering floor in `G = 1 / max(g_floor^2, g^2)`.
    pub g_floor: f64,
    pub upper_trigger_factor: f64,
    pub rounding: Rounding,
    /// Upper bound on sweeps per mutation.
    pub r_cap: usize,
    pub mixture_components: usize,
    /// Reinitialisations allowed before falling back to replacement.
    pub reinit_limit: usize,
}

impl Default for AdaptPolicy {
    fn default() -> Self {
        Self {
            stage2: Stage2::NovelEsjd,
            stage3: Stage3::Replace,
            esjd_target: 6.0,
            k: 100,
            nx_min: 1,
            nx_max: usize::MAX,
            var_target_base: 1.0,
            var_min_base: 0.95 * 0.95,
            var_max_base: 1.05 * 1.05,
            g_floor: 0.6,
            upper_trigger_factor: 2.0,
            rounding: Rounding::Ceil,
            r_cap: 100,
            mixture_components: 3,
            reinit_limit: 25,
        }
    }
}

impl AdaptPolicy {
    pub fn new(stage2: Stage2, stage3: Stage3) -> Self {
        Self { stage2, stage3, ..Self::default() }
    }

    /// Fixed `Nx`, adaptive `R`.
    pub fn gold_standard() -> Self {
        Self::new(Stage2::Fixed, Stage3::Replace)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.esjd_target > 0.0 && self.esjd_target.is_finite()) {
            return Err(Error::config("esjd_target must be positive"));
        }
        if self.k < 2 {
            return Err(Error::config("k must be at least 2"));
        }
        if self.nx_min < 1 || self.nx_max < self.nx_min {
            return Err(Error::config(format!("invalid Nx bounds [{}, {}]", self.nx_min, self.nx_max)));
        }
        if !(self.var_min_base < self.var_target_base && self.var_target_base < self.var_max_base) {
            return Err(Error::config("variance band must satisfy min < target < max"));
        }
        if !(self.g_floor > 0.0 && self.g_floor <= 1.0) {
            return Err(Error::config("g_floor must lie in (0, 1]"));
        }
        if self.r_cap < 1 || self.mixture_components < 1 {
            return Err(Error::config("r_cap and mixture_components must be at least 1"));
        }
        if self.stage2 == Stage2::NovelEsjd && self.stage3 != Stage3::Replace {
            return Err(Error::config("novel-esjd is only defined with the replace scheme"));
        }
        Ok(())
    }

    /// Variance multiplier `G`: 1 for data annealing, `1 / max(g_floor^2, g^2)`
    /// under tempering.
    pub fn variance_scale(&self, flavor: Flavor, g: f64) -> f64 {
        match flavor {
            Flavor::DataAnnealing => 1.0,
            Flavor::DensityTempering => 1.0 / (self.g_floor * self.g_floor).max(g * g),
        }
    }

    fn upper_trigger_enabled(&self) -> bool {
        self.stage2 != Stage2::Double && self.stage3 != Stage3::Reinit
    }

    fn clamp(&self, nx: usize) -> usize {
        nx.clamp(self.nx_min, self.nx_max)
    }
}

/// Stage 1: adapt when the last ESJD fell short of the target or, for
/// schemes that may shrink `Nx`, overshot it by the upper trigger factor.
pub fn should_adapt(esjd_prev: f64, policy: &AdaptPolicy) -> bool {
    esjd_prev < policy.esjd_target
        || (policy.upper_trigger_enabled() && esjd_prev > policy.upper_trigger_factor * policy.esjd_target)
}

/// Sweeps needed to reach the ESJD target given one sweep's ESJD:
/// `min(cap, ceil(target / esjd))`, and the cap when nothing moved.
pub fn sweeps_for(esjd: f64, target: f64, cap: usize) -> usize {
    if !(esjd > 0.0) {
        return cap;
    }
    let r = (target / esjd - CEIL_TOL).ceil();
    if r >= cap as f64 {
        cap
    } else {
        (r as usize).max(1)
    }
}

/// Sample variance of `k` log-likelihood estimates at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct VarEstimate {
    pub nx: usize,
    /// `+inf` when any run degenerated.
    pub sigma2_hat: f64,
    pub theta_bar: Vec<f64>,
    pub ll_count: u64,
}

/// Run the filter once per supplied stream at `theta_bar` and return the
/// sample variance of the log-likelihood estimates.
pub fn loglik_variance_from_streams<M: StateSpaceModel + ?Sized>(
    model: &M,
    data: &Dataset,
    t_end: usize,
    theta_bar: &[f64],
    nx: usize,
    rngs: Vec<StreamRng>,
) -> VarEstimate {
    let runs: Vec<(f64, u64)> = rngs
        .into_par_iter()
        .map(|mut rng| {
            let out = run_filter(model, theta_bar, data, t_end, nx, &mut rng);
            (out.log_lik, out.ll_count)
        })
        .collect();
    let lls: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let sigma2_hat = if lls.iter().any(|v| !v.is_finite()) {
        f64::INFINITY
    } else {
        mean_var(&lls).1
    };
    VarEstimate {
        nx,
        sigma2_hat,
        theta_bar: theta_bar.to_vec(),
        ll_count: runs.iter().map(|r| r.1).sum(),
    }
}

/// `k` independent filter runs at `theta_bar` on streams
/// `(VarianceEstimate, op, 0..k)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_loglik_variance<M: StateSpaceModel + ?Sized>(
    model: &M,
    data: &Dataset,
    t_end: usize,
    theta_bar: &[f64],
    nx: usize,
    k: usize,
    streams: &RngStreams,
    op: u64,
) -> VarEstimate {
    let rngs = (0..k).map(|j| streams.stream(Purpose::VarianceEstimate, op, j as u64)).collect();
    loglik_variance_from_streams(model, data, t_end, theta_bar, nx, rngs)
}

/// Stage 2 candidate values of `Nx` in ascending order, clamped to the
/// policy bounds. `var_scale` is `G`.
pub fn candidates_stage2(nx: usize, sigma2_hat: f64, var_scale: f64, policy: &AdaptPolicy) -> Vec<usize> {
    let s2 = if sigma2_hat.is_finite() {
        sigma2_hat
    } else {
        INFINITE_VARIANCE_CAP
    };
    let n = nx as f64;
    let round = |x: f64| policy.rounding.apply(x);
    let raw: Vec<usize> = match policy.stage2 {
        Stage2::Fixed => vec![nx],
        Stage2::Double => vec![2 * nx],
        Stage2::RescaleVar => vec![round(s2 * n)],
        Stage2::RescaleStd => vec![round(s2.sqrt() * n)],
        Stage2::NovelVar => {
            let lo = policy.var_min_base * var_scale;
            let hi = policy.var_max_base * var_scale;
            if lo < s2 && s2 < hi {
                vec![nx]
            } else {
                let s = s2 / (policy.var_target_base * var_scale);
                vec![round(n * s.sqrt()), round(n * s.powf(0.75)), round(n * s)]
            }
        }
        Stage2::NovelEsjd => {
            let s = s2 / var_scale;
            vec![nx, 2 * nx, round(n * s.sqrt()), round(n * s)]
        }
    };
    let mut out: Vec<usize> = raw.into_iter().map(|v| policy.clamp(v)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// REPLACE: fresh clouds with `nx_new` particles for every parameter
/// particle; weights are left exactly as they were.
pub fn replace_clouds<M: StateSpaceModel + ?Sized>(ens: &mut Ensemble, model: &M, data: &Dataset, nx_new: usize) {
    ens.nx = nx_new;
    refresh_clouds(ens, model, data, Purpose::Replace);
}

/// REWEIGHT: fresh clouds with `nx_new` particles and incremental weights
/// `exponent * (ln p̂_new - ln p̂_old)`, the exponent being the temperature
/// under tempering and 1 under annealing. Returns the incremental log-weights.
pub fn reweight_clouds<M: StateSpaceModel + ?Sized>(
    ens: &mut Ensemble,
    model: &M,
    data: &Dataset,
    nx_new: usize,
) -> Vec<f64> {
    ens.nx = nx_new;
    let old = refresh_clouds(ens, model, data, Purpose::Replace);
    let exponent = match ens.flavor {
        Flavor::DensityTempering => ens.g,
        Flavor::DataAnnealing => 1.0,
    };
    let incr: Vec<f64> = ens
        .particles
        .iter()
        .zip(&old)
        .map(|(p, &ll_old)| reweight_increment(exponent, p.log_lik, ll_old))
        .collect();
    for (lw, i) in ens.log_weights.iter_mut().zip(&incr) {
        *lw += i;
    }
    ens.normalize();
    incr
}

/// `exponent * (ll_new - ll_old)`; a particle without a valid previous
/// estimate gets zero weight.
pub fn reweight_increment(exponent: f64, ll_new: f64, ll_old: f64) -> f64 {
    if ll_old == f64::NEG_INFINITY {
        return if exponent == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    scaled(exponent, ll_new - ll_old)
}

/// Result of an adaptive mutation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MutationOutcome {
    Mutated { r: usize, esjd: f64 },
    /// The run must restart from a fitted reference with `nx_new` particles.
    Restart { nx_new: usize },
}

fn variance_at_mean<M: StateSpaceModel + ?Sized>(
    ens: &mut Ensemble,
    model: &M,
    data: &Dataset,
    policy: &AdaptPolicy,
    nx: usize,
) -> VarEstimate {
    let theta_bar = model.spec().to_constrained(&ens.unconstrained_mean());
    let op = ens.next_op();
    let t_end = ens.t_end(data);
    let streams = *ens.streams();
    let est = estimate_loglik_variance(model, data, t_end, &theta_bar, nx, policy.k, &streams, op);
    ens.tll += est.ll_count;
    est
}

/// Adaptive mutation for every stage-2 strategy; NOVEL-ESJD is delegated to
/// [`adaptive_mutation_esjd`]. The ensemble must have just been resampled.
pub fn adaptive_mutation<M: StateSpaceModel + ?Sized>(
    ens: &mut Ensemble,
    model: &M,
    data: &Dataset,
    policy: &AdaptPolicy,
) -> Result<MutationOutcome> {
    let adapt = should_adapt(ens.esjd_prev, policy);
    if adapt && policy.stage2 == Stage2::NovelEsjd {
        return adaptive_mutation_esjd(ens, model, data, policy);
    }
    let proposal = default_proposal(&ens.particles, &ens.weights()).prepare();
    if !adapt {
        let mut esjd = 0.0;
        for _ in 0..ens.r {
            esjd += ens.sweep(model, data, &proposal).esjd;
        }
        ens.esjd_prev = esjd;
        return Ok(MutationOutcome::Mutated { r: ens.r, esjd });
    }

    let nx_before = ens.nx;
    let mut event = new_event(ens, policy);
    let nx_new = match policy.stage2 {
        Stage2::Fixed => nx_before,
        Stage2::Double => policy.clamp(2 * nx_before),
        _ => {
            let est = variance_at_mean(ens, model, data, policy, nx_before);
            event.sigma2_hat = Some(est.sigma2_hat);
            let g_scale = policy.variance_scale(ens.flavor, ens.g);
            let cands = candidates_stage2(nx_before, est.sigma2_hat, g_scale, policy);
            event.candidates = cands.clone();
            if policy.stage2 == Stage2::NovelVar && cands.len() > 1 {
                let sigma_max = policy.var_max_base * g_scale;
                let mut vars = Vec::with_capacity(cands.len());
                for &c in &cands {
                    vars.push(variance_at_mean(ens, model, data, policy, c).sigma2_hat);
                }
                event.candidate_scores = vars.clone();
                // Highest variance not above the maximum, else the largest candidate.
                cands
                    .iter()
                    .zip(&vars)
                    .filter(|(_, &v)| v <= sigma_max)
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(&c, _)| c)
                    .unwrap_or(*cands.last().expect("candidate list is never empty"))
            } else {
                cands[0]
            }
        }
    };

    if nx_new != nx_before {
        match policy.stage3 {
            Stage3::Replace => {
                replace_clouds(ens, model, data, nx_new);
                event.action = "replace";
            }
            Stage3::Reweight => {
                reweight_clouds(ens, model, data, nx_new);
                event.action = "reweight";
            }
            Stage3::Reinit if nx_new > nx_before && ens.restarts < policy.reinit_limit => {
                event.chosen_nx = nx_new;
                event.action = "reinit";
                event.r = ens.r;
                ens.events.push(event);
                return Ok(MutationOutcome::Restart { nx_new });
            }
            Stage3::Reinit if nx_new > nx_before => {
                warn!("reinitialisation limit reached; replacing clouds instead");
                replace_clouds(ens, model, data, nx_new);
                event.action = "replace";
            }
            Stage3::Reinit => {}
        }
    }

    let first = ens.sweep(model, data, &proposal).esjd;
    let r = sweeps_for(first, policy.esjd_target, policy.r_cap);
    if r == policy.r_cap {
        warn!("sweep count capped at {r} (first-sweep ESJD {first:.3e})");
    }
    let mut esjd = first;
    for _ in 1..r {
        esjd += ens.sweep(model, data, &proposal).esjd;
    }
    ens.r = r;
    ens.esjd_prev = esjd;
    event.chosen_nx = ens.nx;
    event.r = r;
    info!("adapted at stage {}: Nx {} -> {}, R = {r}", ens.d, nx_before, ens.nx);
    ens.events.push(event);
    Ok(MutationOutcome::Mutated { r, esjd })
}

/// Adaptive mutation for NOVEL-ESJD: try candidates in ascending order with
/// one sweep each, score them by `1 / (Nx R)` and stop as soon as the score
/// stops improving. A candidate equal to the current `Nx` keeps its clouds,
/// since fresh clouds would hide how sticky the current chains are; every
/// other candidate gets fresh clouds. The scoring sweep of the winner counts
/// as its first sweep; the reported ESJD sums every sweep of the stage.
pub fn adaptive_mutation_esjd<M: StateSpaceModel + ?Sized>(
    ens: &mut Ensemble,
    model: &M,
    data: &Dataset,
    policy: &AdaptPolicy,
) -> Result<MutationOutcome> {
    let proposal = default_proposal(&ens.particles, &ens.weights()).prepare();
    if !should_adapt(ens.esjd_prev, policy) {
        let mut esjd = 0.0;
        for _ in 0..ens.r {
            esjd += ens.sweep(model, data, &proposal).esjd;
        }
        ens.esjd_prev = esjd;
        return Ok(MutationOutcome::Mutated { r: ens.r, esjd });
    }

    let nx_before = ens.nx;
    let mut event = new_event(ens, policy);
    let est = variance_at_mean(ens, model, data, policy, nx_before);
    event.sigma2_hat = Some(est.sigma2_hat);
    let g_scale = policy.variance_scale(ens.flavor, ens.g);
    let cands = candidates_stage2(nx_before, est.sigma2_hat, g_scale, policy);
    event.candidates = cands.clone();

    let mut total_esjd = 0.0;
    // (nx, R) of the best candidate so far.
    let mut chosen: Option<(usize, usize)> = None;
    for &nx_m in &cands {
        if nx_m != ens.nx {
            replace_clouds(ens, model, data, nx_m);
        }
        let e = ens.sweep(model, data, &proposal).esjd;
        total_esjd += e;
        let r_m = sweeps_for(e, policy.esjd_target, policy.r_cap);
        event.candidate_scores.push(1.0 / (nx_m as f64 * r_m as f64));
        if let Some((nx_prev, r_prev)) = chosen {
            let (cost, cost_prev) = (nx_m * r_m, nx_prev * r_prev);
            if cost > cost_prev {
                replace_clouds(ens, model, data, nx_prev);
                break;
            }
            if cost == cost_prev {
                chosen = Some((nx_m, r_m));
                break;
            }
        }
        chosen = Some((nx_m, r_m));
    }
    let (nx, r) = chosen.expect("candidate list is never empty");
    debug_assert_eq!(ens.nx, nx);
    for _ in 1..r {
        total_esjd += ens.sweep(model, data, &proposal).esjd;
    }
    ens.r = r;
    ens.esjd_prev = total_esjd;
    event.chosen_nx = nx;
    event.r = r;
    event.action = "replace";
    info!("adapted at stage {}: Nx {} -> {}, R = {r}", ens.d, nx_before, nx);
    ens.events.push(event);
    Ok(MutationOutcome::Mutated { r, esjd: total_esjd })
}

fn new_event(ens: &Ensemble, policy: &AdaptPolicy) -> AdaptEvent {
    AdaptEvent {
        d: ens.d,
        g_d: ens.g,
        trigger: if ens.esjd_prev < policy.esjd_target { "low-esjd" } else { "high-esjd" },
        esjd_prev: ens.esjd_prev,
        nx_before: ens.nx,
        sigma2_hat: None,
        candidates: Vec::new(),
        candidate_scores: Vec::new(),
        chosen_nx: ens.nx,
        r: ens.r,
        action: "none",
    }
}
