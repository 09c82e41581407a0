//! Median epoch time of the two contrastive strategies on a slice of a dataset.
//!
//! cargo run --release --example profile_epochs -- data/esol.csv

use molfuse::integration::Strategy;
use molfuse::training::{prepare, profile, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig {
        seeds: vec![0],
        limit: Some(200),
        ..RunConfig::default()
    };
    if let Some(p) = std::env::args().nth(1) {
        cfg.dataset = p.into();
    }
    let data = prepare(&cfg)?;
    let report = profile(&cfg, &data, &[Strategy::ContrastNode, Strategy::ContrastGraph], 1, 3)?;
    print!("{}", report.table());
    Ok(())
}
