//! A small benchmark grid scored against the fixed-`Nx` gold standard:
//! `Z_MSE`, `Z_TLL` and their product, higher is better.
//!
//! cargo run --release --example score_table -- [out_dir]

use std::path::PathBuf;

use adaptive_smc2::cli::{format_scores, run_bench};
use adaptive_smc2::config::{BenchSettings, DataSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "score_table".into()));
    let settings = BenchSettings {
        model: "bm".into(),
        flavor: "da".into(),
        n_theta: 200,
        methods: vec!["gold-standard".into(), "novel-esjd+replace".into(), "rescale-var+replace".into()],
        initial_nx: vec![10, 100],
        gold_standard_nx: 240,
        replicates: 3,
        seed: 1,
        baseline: "gold-standard".into(),
        esjd_target: 6.0,
        k: 100,
        reference_length: 100_000,
        reference_nx: None,
        out: None,
        data: DataSettings { n_obs: Some(100), data_seed: Some(7), ..DataSettings::default() },
    };
    let result = run_bench(&settings, &dir)?;
    print!("{}", format_scores(&result.scores));
    println!("per-run results in {}", dir.join("runs.csv").display());
    Ok(())
}
