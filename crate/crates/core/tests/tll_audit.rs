//! The engine's likelihood-evaluation counter must equal the number of
//! observation-density evaluations actually made.

use adaptive_smc2::adapt::{AdaptPolicy, Stage2, Stage3};
use adaptive_smc2::engine::{run_smc2, Flavor, RunConfig};
use adaptive_smc2::models::testing::CountingModel;
use adaptive_smc2::models::{simulate_dataset, BrownianMotion};

fn audit(flavor: Flavor, stage2: Stage2, stage3: Stage3) {
    let bm = BrownianMotion::new();
    let data = simulate_dataset(&bm, &[1.0, 1.2, 1.5, 1.0], 15, 2).unwrap();
    let model = CountingModel::new(bm);
    let mut policy = AdaptPolicy::new(stage2, stage3);
    policy.k = 10;
    policy.nx_max = 200;
    let config = RunConfig::new(flavor, 60, 5, 11, policy);
    let ens = run_smc2(&model, &data, &config).unwrap();
    assert_eq!(ens.tll, model.evaluations(), "{flavor} {stage2}+{stage3}");
    assert_eq!(ens.trace.last().unwrap().tll, ens.tll);
    assert!(ens.trace.windows(2).all(|w| w[0].tll <= w[1].tll));
}

#[test]
fn annealing_counts_match() {
    audit(Flavor::DataAnnealing, Stage2::NovelEsjd, Stage3::Replace);
    audit(Flavor::DataAnnealing, Stage2::RescaleVar, Stage3::Reweight);
    audit(Flavor::DataAnnealing, Stage2::NovelVar, Stage3::Replace);
}

#[test]
fn tempering_counts_match() {
    audit(Flavor::DensityTempering, Stage2::NovelEsjd, Stage3::Replace);
    audit(Flavor::DensityTempering, Stage2::Double, Stage3::Reinit);
    audit(Flavor::DensityTempering, Stage2::Fixed, Stage3::Replace);
}
