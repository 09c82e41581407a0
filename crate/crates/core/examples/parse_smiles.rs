//! Parse SMILES strings into molecular graphs and token sequences.
//!
//! cargo run --example parse_smiles -- "C1=CC=C(C=C1)O" "CC(=O)N"

use molfuse::smiles::{parse, tokenize, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut inputs: Vec<String> = std::env::args().skip(1).collect();
    if inputs.is_empty() {
        inputs = vec!["C1=CC=C(C=C1)O".into(), "[NH4+].[Cl-]".into(), "C1CC".into()];
    }
    let vocab = Vocabulary::build(inputs.iter().map(String::as_str));
    for s in &inputs {
        match parse(s) {
            Ok(g) => {
                let t = tokenize(s, &vocab)?;
                println!("{s}: {} atoms, {} bonds, {} tokens", g.num_atoms(), g.num_bonds(), t.len() - 1);
                print!("{}", g.dump());
            }
            Err(e) => println!("{s}: rejected ({e})"),
        }
    }
    Ok(())
}
