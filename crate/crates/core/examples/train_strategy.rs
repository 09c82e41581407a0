//! Train one strategy on a CSV for a few epochs with a single seed.
//!
//! cargo run --release --example train_strategy -- contrast-graph data/esol.csv

use molfuse::integration::Strategy;
use molfuse::training::{prepare, train_one, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strategy: Strategy = args.first().map(String::as_str).unwrap_or("late-fusion").parse()?;
    let mut cfg = RunConfig {
        strategy,
        seeds: vec![0],
        ..RunConfig::default()
    };
    if let Some(p) = args.get(1) {
        cfg.dataset = p.into();
    }
    cfg.apply_text("max_epochs = 5\nhidden_dim = 32\nffn_dim = 64\nnum_layers = 2\n")?;

    let data = prepare(&cfg)?;
    println!("{} molecules, {} quarantined", data.samples.len(), data.quarantined());
    let (_, r) = train_one(&cfg, &data, 0)?;
    println!(
        "{strategy}: test {} {:.4} (naive {:.4}) after {} epochs",
        cfg.task.metric_name(),
        r.test_metric.unwrap_or(f64::NAN),
        r.naive_baseline,
        r.epochs_run
    );
    Ok(())
}
