//! Fusion-operator sweep on a reduced model and data budget.
//!
//! cargo run --release --example ablation -- data/esol.csv

use molfuse::integration::Strategy;
use molfuse::training::{ablate, prepare, AblationKind, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig {
        strategy: Strategy::LateFusion,
        seeds: vec![0, 7],
        limit: Some(150),
        ..RunConfig::default()
    };
    if let Some(p) = std::env::args().nth(1) {
        cfg.dataset = p.into();
    }
    cfg.apply_text("max_epochs = 3\nhidden_dim = 16\nffn_dim = 32\nnum_layers = 1\nnum_heads = 2\n")?;
    let data = prepare(&cfg)?;
    print!("{}", ablate(AblationKind::Fusion, &cfg, &data)?.render());
    Ok(())
}
