//! Simulate each bundled model at its benchmark parameters, write the series
//! as CSV and check that a particle filter can evaluate it.
//!
//! cargo run --release --example simulate_models -- [out_dir]

use std::path::PathBuf;

use adaptive_smc2::filter::run_filter;
use adaptive_smc2::models::{default_truth, model_by_id, simulate_dataset, MODEL_IDS};
use adaptive_smc2::rng::{Purpose, RngStreams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "simulated".into()));
    std::fs::create_dir_all(&dir)?;
    for id in MODEL_IDS {
        let model = model_by_id(id)?;
        let (truth, t) = default_truth(id)?;
        let data = simulate_dataset(model.as_ref(), &truth, t, 7)?;
        let path = dir.join(format!("{id}.csv"));
        data.to_csv(&path)?;
        let mut rng = RngStreams::new(1).stream(Purpose::Extend, 0, 0);
        let pf = run_filter(model.as_ref(), &truth, &data, data.len(), 500, &mut rng);
        println!("{id:<15} T = {t:>4}, columns = {}, ln p̂ at truth (Nx=500) = {:.2} -> {}", data.dim_obs(), pf.log_lik, path.display());
    }
    Ok(())
}
