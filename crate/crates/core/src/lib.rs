//! SMC² for state-space models with online adaptation of the number of state
//! particles.
//!
//! A run moves a population of parameter particles through a sequence of
//! targets (density tempering or data annealing). Each parameter particle
//! carries a bootstrap particle filter whose size `Nx` is tuned on the fly
//! from the expected squared jumping distance of the PMMH moves.
//!
//! ```no_run
//! use adaptive_smc2::adapt::AdaptPolicy;
//! use adaptive_smc2::engine::{run_smc2, Flavor, RunConfig};
//! use adaptive_smc2::models::{simulate_dataset, BrownianMotion};
//!
//! let model = BrownianMotion::new();
//! let data = simulate_dataset(&model, &[1.0, 1.2, 1.5, 1.0], 100, 7).unwrap();
//! let config = RunConfig::new(Flavor::DataAnnealing, 500, 10, 1, AdaptPolicy::default());
//! let ens = run_smc2(&model, &data, &config).unwrap();
//! println!("final Nx = {}, posterior mean = {:?}", ens.nx, ens.posterior_mean());
//! ```

pub mod adapt;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod filter;
pub mod harness;
pub mod math;
pub mod mixture;
pub mod models;
pub mod pmmh;
pub mod rng;

pub use error::{Error, Result};
