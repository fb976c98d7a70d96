//! Evolution of `Nx` over the stages for every stage-2 strategy with
//! REPLACE, written as long-format CSV for plotting.
//!
//! cargo run --release --example nx_evolution -- [da|dt] [out.csv]

use std::env;

use adaptive_smc2::adapt::{AdaptPolicy, Stage2, Stage3};
use adaptive_smc2::engine::{run_smc2, Flavor, RunConfig};
use adaptive_smc2::models::{simulate_dataset, BrownianMotion};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = env::args().collect();
    let flavor: Flavor = args.get(1).map_or("da", |s| s.as_str()).parse()?;
    let out = args.get(2).cloned().unwrap_or_else(|| "nx_evolution.csv".into());

    let bm = BrownianMotion::new();
    let data = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 100, 7)?;
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["method", "seed", "d", "g_d", "Nx"])?;
    for stage2 in [Stage2::Double, Stage2::RescaleVar, Stage2::RescaleStd, Stage2::NovelVar, Stage2::NovelEsjd] {
        let mut policy = AdaptPolicy::new(stage2, Stage3::Replace);
        policy.nx_max = 1200;
        for seed in 1..=3u64 {
            let ens = run_smc2(&bm, &data, &RunConfig::new(flavor, 300, 10, seed, policy.clone()))?;
            for r in &ens.trace {
                w.write_record([stage2.to_string(), seed.to_string(), r.d.to_string(), r.g_d.to_string(), r.nx.to_string()])?;
            }
            println!("{stage2:<12} seed {seed}: final Nx {:>5}, tll {}", ens.nx, ens.tll);
        }
    }
    w.flush()?;
    println!("wrote {out}");
    Ok(())
}
