//! Save a model to the binary checkpoint format and load it back.

use molfuse::dataset::TaskKind;
use molfuse::integration::{Batch, Model, ModelConfig, Sample, Strategy};
use molfuse::smiles::{corpus_smiles, Vocabulary};
use molfuse::training::{load_checkpoint, save_checkpoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::build(corpus_smiles());
    let model = Model::new(ModelConfig::tiny(Strategy::Mpnn2Lm, TaskKind::Regression, vocab.len()), 4)?;
    let path = std::env::temp_dir().join("molfuse-example.bin");
    save_checkpoint(&path, &model, &vocab)?;
    let (back, v2) = load_checkpoint(&path)?;

    let s = Sample::new("CC(=O)Oc1ccccc1C(=O)O", 0.0, &v2)?;
    let batch = Batch::new(&[&s], 64)?;
    println!(
        "{} bytes, {} tensors, identical: {}, prediction {:?}",
        std::fs::metadata(&path)?.len(),
        back.params.len(),
        back == model,
        back.predict(&batch)?
    );
    std::fs::remove_file(path)?;
    Ok(())
}
