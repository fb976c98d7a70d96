//! Commands behind the `smc2` binary: single runs, the candidate table and
//! benchmark grids. Each command returns its results so it can be driven from
//! tests as well as the command line.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::adapt::{candidates_stage2, AdaptPolicy, Stage2, Stage3};
use crate::config::{build_policy, load_bench_settings, load_run_settings, BenchSettings, Method, RunPlan};
use crate::engine::{run_smc2, AdaptEvent, Ensemble, Flavor, RunConfig};
use crate::error::{Error, Result};
use crate::harness::{mse, reference_posterior_mean, score_runs, ReferenceConfig, ReferenceMethod, ReferencePosterior, RunInput, RunMetrics};
use crate::models::{model_by_id, Dataset, StateSpaceModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Process exit status for an error. Bad configuration and unreadable input
/// files are the user's to fix (2); everything else is a runtime failure (1).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Data { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

const DEFAULT_OUT: &str = "smc2-out";

fn out_dir(cli: &Option<PathBuf>, file: &Option<PathBuf>) -> PathBuf {
    cli.clone().or_else(|| file.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[derive(Serialize)]
struct ParamSummary<'a> {
    name: &'a str,
    mean: f64,
    variance: f64,
    mean_unconstrained: f64,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    model: &'a str,
    flavor: Flavor,
    stage2: String,
    stage3: String,
    n_theta: usize,
    nx0: usize,
    seed: u64,
    n_obs: usize,
    data: &'a str,
    stages: usize,
    final_nx: usize,
    tll: u64,
    restarts: usize,
    params: Vec<ParamSummary<'a>>,
    events: &'a [AdaptEvent],
}

/// Result of a single run and where its artifacts went.
pub struct RunArtifacts {
    pub ensemble: Ensemble,
    pub dir: PathBuf,
}

/// Write `trace.csv`, `samples.csv` and `summary.json` for a finished run.
pub fn write_run_artifacts(
    dir: &Path,
    model: &dyn StateSpaceModel,
    data: &Dataset,
    config: &RunConfig,
    ens: &Ensemble,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let spec = model.spec();

    let mut trace = csv::Writer::from_path(dir.join("trace.csv")).map_err(csv_err)?;
    if ens.trace.is_empty() {
        trace.write_record(["d", "g_d", "Nx", "R", "esjd", "ess", "tll", "wall_ms"]).map_err(csv_err)?;
    }
    for row in &ens.trace {
        trace.serialize(row).map_err(csv_err)?;
    }
    trace.flush()?;

    let mut samples = csv::Writer::from_path(dir.join("samples.csv")).map_err(csv_err)?;
    let mut header: Vec<&str> = spec.param_names.clone();
    header.push("weight");
    samples.write_record(&header).map_err(csv_err)?;
    for (p, w) in ens.particles.iter().zip(ens.weights()) {
        let row: Vec<String> = p.theta.iter().chain(std::iter::once(&w)).map(|x| x.to_string()).collect();
        samples.write_record(&row).map_err(csv_err)?;
    }
    samples.flush()?;

    let mean = ens.posterior_mean();
    let var = ens.posterior_variance();
    let mean_u = ens.unconstrained_mean();
    let summary = RunSummary {
        model: spec.id,
        flavor: config.flavor,
        stage2: config.policy.stage2.to_string(),
        stage3: config.policy.stage3.to_string(),
        n_theta: config.n_theta,
        nx0: config.nx0,
        seed: config.seed,
        n_obs: data.len(),
        data: &data.meta,
        stages: ens.trace.len(),
        final_nx: ens.nx,
        tll: ens.tll,
        restarts: ens.restarts,
        params: spec
            .param_names
            .iter()
            .enumerate()
            .map(|(j, name)| ParamSummary { name, mean: mean[j], variance: var[j], mean_unconstrained: mean_u[j] })
            .collect(),
        events: &ens.events,
    };
    let mut f = File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Execute a planned run and write its artifacts to `dir`.
pub fn execute_plan(plan: &RunPlan, dir: &Path) -> Result<Ensemble> {
    let ens = run_smc2(plan.model.as_ref(), &plan.data, &plan.config)?;
    write_run_artifacts(dir, plan.model.as_ref(), &plan.data, &plan.config, &ens)?;
    Ok(ens)
}

/// `smc2 run`: load a config, run, write artifacts.
pub fn cmd_run(config_path: &Path, overrides: &Overrides) -> Result<RunArtifacts> {
    let mut settings = load_run_settings(config_path)?;
    if let Some(seed) = overrides.seed {
        settings.seed = seed;
    }
    let plan = settings.plan()?;
    let dir = out_dir(&overrides.out, &plan.out);
    info!(
        "running {} {} with {}+{}, N_theta = {}, Nx0 = {}, seed {}",
        settings.model, plan.config.flavor, plan.config.policy.stage2, plan.config.policy.stage3,
        plan.config.n_theta, plan.config.nx0, plan.config.seed
    );
    let ensemble = execute_plan(&plan, &dir)?;
    Ok(RunArtifacts { ensemble, dir })
}

/// Variances and strategies shown in the candidate table.
pub const TABLE1_VARIANCES: [f64; 4] = [0.5, 1.0, 1.5, 50.0];
pub const TABLE1_STRATEGIES: [Stage2; 5] =
    [Stage2::Double, Stage2::RescaleVar, Stage2::RescaleStd, Stage2::NovelVar, Stage2::NovelEsjd];
pub const TABLE1_NX: usize = 100;

/// Candidate sets for `Nx = 100`, `G = 1`, one row per variance and one
/// column per strategy.
pub fn table1_rows() -> Vec<(f64, Vec<Vec<usize>>)> {
    TABLE1_VARIANCES
        .iter()
        .map(|&s2| {
            let cells = TABLE1_STRATEGIES
                .iter()
                .map(|&s| candidates_stage2(TABLE1_NX, s2, 1.0, &AdaptPolicy::new(s, Stage3::Replace)))
                .collect();
            (s2, cells)
        })
        .collect()
}

/// `smc2 table1`: the candidate table as aligned text.
pub fn cmd_table1() -> String {
    let join = |c: &[usize]| c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("sigma2_hat".to_string())
        .chain(TABLE1_STRATEGIES.iter().map(|s| s.to_string()))
        .collect()];
    for (s2, cells) in table1_rows() {
        rows.push(std::iter::once(s2.to_string()).chain(cells.iter().map(|c| join(c))).collect());
    }
    let widths: Vec<usize> = (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// One row of `scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub method: String,
    pub nx0: usize,
    pub z_mse: f64,
    pub z_tll: f64,
    pub z: f64,
}

/// One replicate of the benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRun {
    pub method: String,
    pub nx0: usize,
    pub replicate: usize,
    pub seed: u64,
    pub mse: f64,
    pub tll: u64,
    pub final_nx: usize,
}

pub struct BenchResult {
    pub reference: ReferencePosterior,
    pub runs: Vec<BenchRun>,
    pub scores: Vec<ScoreRow>,
    pub dir: PathBuf,
}

/// Run the benchmark grid described by `settings`. Every method and initial
/// `Nx` runs `replicates` times with seeds `seed + replicate`; MSE and TLL
/// are averaged over replicates and scored against the baseline method.
pub fn run_bench(settings: &BenchSettings, dir: &Path) -> Result<BenchResult> {
    let methods = settings.methods()?;
    let model = model_by_id(&settings.model)?;
    let flavor: Flavor = settings.flavor.parse()?;
    let data = settings.data.dataset(model.as_ref())?;
    fs::create_dir_all(dir)?;

    let ref_method = if settings.model == "bm" {
        ReferenceMethod::ExactMcmc
    } else {
        ReferenceMethod::Pmmh { nx: settings.reference_nx.unwrap_or(settings.gold_standard_nx) }
    };
    info!("reference chain: {:?}, {} iterations", ref_method, settings.reference_length);
    let reference = reference_posterior_mean(
        model.as_ref(),
        &data,
        &ReferenceConfig::new(ref_method, settings.reference_length, settings.seed.wrapping_add(1_000_003)),
    )?;

    let mut cells: Vec<(Method, usize)> = Vec::new();
    for m in &methods {
        if m.is_gold_standard() {
            cells.push((m.clone(), settings.gold_standard_nx));
        } else {
            cells.extend(settings.initial_nx.iter().map(|&nx| (m.clone(), nx)));
        }
    }

    let mut runs = Vec::new();
    let mut inputs = Vec::new();
    for (m, nx0) in &cells {
        let policy = build_policy(
            &m.stage2.to_string(),
            &m.stage3.to_string(),
            settings.esjd_target,
            settings.k,
            1,
            None,
            Some(settings.gold_standard_nx),
            "ceil",
            100,
        )?;
        let (mut mse_sum, mut tll_sum) = (0.0, 0.0);
        for rep in 0..settings.replicates {
            let seed = settings.seed.wrapping_add(rep as u64);
            let config = RunConfig::new(flavor, settings.n_theta, *nx0, seed, policy.clone());
            let ens = run_smc2(model.as_ref(), &data, &config)?;
            let err = mse(&ens.unconstrained_mean(), &reference.mean_unconstrained);
            info!("{} Nx0 = {nx0} replicate {rep}: mse {err:.4e}, tll {}", m.id, ens.tll);
            mse_sum += err;
            tll_sum += ens.tll as f64;
            runs.push(BenchRun {
                method: m.id.clone(),
                nx0: *nx0,
                replicate: rep,
                seed,
                mse: err,
                tll: ens.tll,
                final_nx: ens.nx,
            });
        }
        let n = settings.replicates as f64;
        inputs.push(RunInput { id: cell_id(&m.id, *nx0), mse: mse_sum / n, tll: tll_sum / n });
    }

    let baseline = cells
        .iter()
        .find(|(m, _)| m.id == settings.baseline)
        .map(|(m, nx)| cell_id(&m.id, *nx))
        .ok_or_else(|| Error::config(format!("baseline '{}' is not in the method list", settings.baseline)))?;
    let metrics: Vec<RunMetrics> = score_runs(&inputs, &baseline)?;
    let scores: Vec<ScoreRow> = cells
        .iter()
        .zip(metrics)
        .map(|((m, nx0), s)| ScoreRow { method: m.id.clone(), nx0: *nx0, z_mse: s.z_mse, z_tll: s.z_tll, z: s.z })
        .collect();

    let mut w = csv::Writer::from_path(dir.join("scores.csv")).map_err(csv_err)?;
    for s in &scores {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("runs.csv")).map_err(csv_err)?;
    for r in &runs {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    let mut f = File::create(dir.join("reference.json"))?;
    serde_json::to_writer_pretty(&mut f, &reference)?;
    writeln!(f)?;

    Ok(BenchResult { reference, runs, scores, dir: dir.to_path_buf() })
}

fn cell_id(method: &str, nx0: usize) -> String {
    format!("{method}@{nx0}")
}

/// `smc2 bench`: load a grid config and run it.
pub fn cmd_bench(config_path: &Path, overrides: &Overrides) -> Result<BenchResult> {
    let mut settings = load_bench_settings(config_path)?;
    if let Some(seed) = overrides.seed {
        settings.seed = seed;
    }
    let dir = out_dir(&overrides.out, &settings.out);
    run_bench(&settings, &dir)
}

/// Render scores as an aligned table.
pub fn format_scores(scores: &[ScoreRow]) -> String {
    let mut out = format!("{:<28} {:>6} {:>8} {:>8} {:>8}\n", "method", "Nx0", "Z_MSE", "Z_TLL", "Z");
    for s in scores {
        out.push_str(&format!("{:<28} {:>6} {:>8.2} {:>8.2} {:>8.2}\n", s.method, s.nx0, s.z_mse, s.z_tll, s.z));
    }
    out
}
