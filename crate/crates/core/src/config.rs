//! Flat TOML run and benchmark configurations.
//!
//! ```toml
//! model = "bm"
//! flavor = "dt"
//! stage2 = "novel-esjd"
//! stage3 = "replace"
//! n_theta = 500
//! nx0 = 10
//! seed = 1
//! n_obs = 100            # synthetic data from the model's default truth
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::adapt::{AdaptPolicy, Rounding, Stage2, Stage3};
use crate::engine::{Flavor, RunConfig};
use crate::error::{Error, Result};
use crate::models::{default_truth, model_by_id, simulate_dataset, Dataset, StateSpaceModel};

fn default_flavor() -> String {
    "dt".into()
}
fn default_stage2() -> String {
    "novel-esjd".into()
}
fn default_stage3() -> String {
    "replace".into()
}
fn default_rounding() -> String {
    "ceil".into()
}
fn default_n_theta() -> usize {
    500
}
fn default_nx0() -> usize {
    10
}
fn default_esjd_target() -> f64 {
    6.0
}
fn default_k() -> usize {
    100
}
fn default_one() -> usize {
    1
}
fn default_r_cap() -> usize {
    100
}
fn default_replicates() -> usize {
    5
}
fn default_reference_length() -> usize {
    200_000
}
fn default_baseline() -> String {
    "gold-standard".into()
}

/// Where the observations come from. Either a CSV file or a synthetic
/// dataset simulated at `truth` (default: the model's benchmark values).
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    pub data: Option<PathBuf>,
    pub n_obs: Option<usize>,
    pub truth: Option<Vec<f64>>,
    pub data_seed: Option<u64>,
}

/// Settings shared by run and bench files.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub model: String,
    #[serde(default = "default_flavor")]
    pub flavor: String,
    #[serde(default = "default_stage2")]
    pub stage2: String,
    #[serde(default = "default_stage3")]
    pub stage3: String,
    #[serde(default = "default_n_theta")]
    pub n_theta: usize,
    #[serde(default = "default_nx0")]
    pub nx0: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_esjd_target")]
    pub esjd_target: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_one")]
    pub nx_min: usize,
    pub nx_max: Option<usize>,
    /// Pre-tuned `Nx`; caps adaptive runs at five times this value.
    pub gold_standard_nx: Option<usize>,
    #[serde(default = "default_rounding")]
    pub rounding: String,
    #[serde(default = "default_r_cap")]
    pub r_cap: usize,
    #[serde(default)]
    pub record_wall_time: bool,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub data: DataSettings,
}

/// Benchmark grid: methods x initial `Nx` x replicates, scored against a
/// baseline method.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub model: String,
    #[serde(default = "default_flavor")]
    pub flavor: String,
    #[serde(default = "default_n_theta")]
    pub n_theta: usize,
    /// Entries like `gold-standard` or `novel-esjd+replace`.
    pub methods: Vec<String>,
    #[serde(default)]
    pub initial_nx: Vec<usize>,
    pub gold_standard_nx: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_baseline")]
    pub baseline: String,
    #[serde(default = "default_esjd_target")]
    pub esjd_target: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_reference_length")]
    pub reference_length: usize,
    /// State particles for the PMMH reference chain (models without an exact
    /// likelihood). Defaults to the gold-standard value.
    pub reference_nx: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub data: DataSettings,
}

/// A validated, ready-to-run configuration.
pub struct RunPlan {
    pub model: Box<dyn StateSpaceModel>,
    pub data: Dataset,
    pub config: RunConfig,
    pub out: Option<PathBuf>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

pub fn load_run_settings(path: &Path) -> Result<RunSettings> {
    let mut s: RunSettings = read_toml(path)?;
    s.data.resolve_relative_to(path);
    Ok(s)
}

pub fn load_bench_settings(path: &Path) -> Result<BenchSettings> {
    let mut s: BenchSettings = read_toml(path)?;
    s.data.resolve_relative_to(path);
    Ok(s)
}

impl DataSettings {
    fn resolve_relative_to(&mut self, config_path: &Path) {
        if let (Some(d), Some(dir)) = (&self.data, config_path.parent()) {
            if d.is_relative() {
                self.data = Some(dir.join(d));
            }
        }
    }

    /// Load or simulate the dataset for `model`.
    pub fn dataset(&self, model: &dyn StateSpaceModel) -> Result<Dataset> {
        if let Some(path) = &self.data {
            if self.truth.is_some() || self.n_obs.is_some() {
                return Err(Error::config("give either a data file or synthetic settings, not both"));
            }
            let ds = Dataset::from_csv(path)?;
            if ds.dim_obs() != model.spec().dim_obs {
                return Err(Error::config(format!(
                    "{} has {} observation columns; model '{}' expects {}",
                    path.display(),
                    ds.dim_obs(),
                    model.spec().id,
                    model.spec().dim_obs
                )));
            }
            return Ok(ds);
        }
        let (truth, t_default) = default_truth(model.spec().id)?;
        let truth = self.truth.clone().unwrap_or(truth);
        if truth.len() != model.spec().dim_theta() {
            return Err(Error::config(format!(
                "truth has {} values; model '{}' has {} parameters",
                truth.len(),
                model.spec().id,
                model.spec().dim_theta()
            )));
        }
        let n_obs = self.n_obs.unwrap_or(t_default);
        simulate_dataset(model, &truth, n_obs, self.data_seed.unwrap_or(0)).map_err(|e| match e {
            Error::Domain(m) => Error::config(m),
            other => other,
        })
    }
}

/// Build an adaptation policy from strategy names and tuning constants.
#[allow(clippy::too_many_arguments)]
pub fn build_policy(
    stage2: &str,
    stage3: &str,
    esjd_target: f64,
    k: usize,
    nx_min: usize,
    nx_max: Option<usize>,
    gold_standard_nx: Option<usize>,
    rounding: &str,
    r_cap: usize,
) -> Result<AdaptPolicy> {
    let policy = AdaptPolicy {
        stage2: stage2.parse::<Stage2>()?,
        stage3: stage3.parse::<Stage3>()?,
        esjd_target,
        k,
        nx_min,
        nx_max: nx_max.or(gold_standard_nx.map(|g| 5 * g)).unwrap_or(usize::MAX),
        rounding: rounding.parse::<Rounding>()?,
        r_cap,
        ..AdaptPolicy::default()
    };
    policy.validate()?;
    Ok(policy)
}

impl RunSettings {
    pub fn plan(&self) -> Result<RunPlan> {
        let model = model_by_id(&self.model)?;
        let flavor: Flavor = self.flavor.parse()?;
        let policy = build_policy(
            &self.stage2,
            &self.stage3,
            self.esjd_target,
            self.k,
            self.nx_min,
            self.nx_max,
            self.gold_standard_nx,
            &self.rounding,
            self.r_cap,
        )?;
        let mut config = RunConfig::new(flavor, self.n_theta, self.nx0, self.seed, policy);
        config.record_wall_time = self.record_wall_time;
        config.validate()?;
        let data = self.data.dataset(model.as_ref())?;
        Ok(RunPlan { model, data, config, out: self.out.clone() })
    }
}

/// One entry of a bench method list: `gold-standard` or `<stage2>+<stage3>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub id: String,
    pub stage2: Stage2,
    pub stage3: Stage3,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        let (s2, s3) = match s.split_once('+') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (s.trim(), "replace"),
        };
        let stage2: Stage2 = s2.parse()?;
        let stage3: Stage3 = s3.parse()?;
        let id = if stage2 == Stage2::Fixed {
            "gold-standard".to_string()
        } else {
            format!("{stage2}+{stage3}")
        };
        Ok(Self { id, stage2, stage3 })
    }

    pub fn is_gold_standard(&self) -> bool {
        self.stage2 == Stage2::Fixed
    }
}

impl BenchSettings {
    pub fn methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(Error::config("bench grid has no methods"));
        }
        if self.replicates == 0 {
            return Err(Error::config("bench needs at least one replicate"));
        }
        let methods = self.methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?;
        if methods.iter().any(|m| !m.is_gold_standard()) && self.initial_nx.is_empty() {
            return Err(Error::config("adaptive methods need at least one initial_nx value"));
        }
        if !methods.iter().any(|m| m.id == self.baseline) {
            return Err(Error::config(format!("baseline '{}' is not in the method list", self.baseline)));
        }
        for m in &methods {
            build_policy(&m.stage2.to_string(), &m.stage3.to_string(), self.esjd_target, self.k, 1, None, Some(self.gold_standard_nx), "ceil", 100)?;
        }
        Ok(methods)
    }
}
