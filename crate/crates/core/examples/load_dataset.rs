//! Load a MoleculeNet-style CSV, report quarantined rows, split 8:1:1 and
//! print the naive baseline.
//!
//! cargo run --example load_dataset -- data/esol.csv smiles "measured log solubility in mols per litre" regression

use molfuse::dataset::{load_csv, naive_baseline, split, SplitSpec, TaskKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args.first().map(String::as_str).unwrap_or("data/esol.csv");
    let smiles = args.get(1).map(String::as_str).unwrap_or("smiles");
    let label = args
        .get(2)
        .map(String::as_str)
        .unwrap_or("measured log solubility in mols per litre");
    let task: TaskKind = args.get(3).map(String::as_str).unwrap_or("regression").parse()?;

    let data = load_csv(path, smiles, label, task)?;
    println!(
        "{path}: {} rows, {} loaded, {} quarantined, {} with stereo markers",
        data.total_rows,
        data.records.len(),
        data.quarantine.len(),
        data.stereo_rows
    );
    print!("{}", data.quarantine_report());

    let s = split(&data.records, &SplitSpec::new(0.8, 0.1, 0.1, 0))?;
    println!("split sizes: {} / {} / {}", s.train.len(), s.valid.len(), s.test.len());
    let y = |r: &[molfuse::dataset::DataRecord]| r.iter().map(|r| r.label).collect::<Vec<_>>();
    let base = naive_baseline(&y(&s.train), &y(&s.test), task)?;
    println!("naive baseline {}: {base:.4}", task.metric_name());
    Ok(())
}
