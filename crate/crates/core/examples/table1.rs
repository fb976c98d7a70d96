//! Candidate values of `Nx` proposed by each stage-2 strategy when `Nx` is
//! currently 100, for a few log-likelihood variance estimates.
//!
//! cargo run --example table1

fn main() {
    print!("{}", adaptive_smc2::cli::cmd_table1());
}
