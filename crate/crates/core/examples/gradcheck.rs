//! Finite-difference check of every differentiable op, then of a small
//! late-fusion model end to end.

use molfuse::autodiff::gradcheck::run_suite;
use molfuse::dataset::TaskKind;
use molfuse::integration::{Batch, FusionOp, Model, ModelConfig, Sample, Strategy};
use molfuse::smiles::{corpus_smiles, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = run_suite(20, 1e-4, 0);
    println!("{report}");

    let vocab = Vocabulary::build(corpus_smiles());
    let a = Sample::new("CCO", 0.3, &vocab)?;
    let b = Sample::new("c1ccncc1", -0.8, &vocab)?;
    let batch = Batch::new(&[&a, &b], 64)?;
    let mut cfg = ModelConfig::tiny(Strategy::LateFusion, TaskKind::Regression, vocab.len());
    cfg.fusion = FusionOp::Gate;
    let model = Model::new(cfg, 1)?;
    let errs = model.check_gradients(&batch, 6, 2)?;
    let (name, worst) = errs.iter().fold(("", 0.0f64), |acc, (n, &e)| if e > acc.1 { (n, e) } else { acc });
    println!("late-fusion/gate: {} tensors, worst relative error {worst:.2e} ({name})", errs.len());
    Ok(())
}
