//! Build node-level triples for a two-molecule batch and evaluate the
//! triplet margin loss, whole and in chunks.

use molfuse::autodiff::{Tape, Tensor};
use molfuse::integration::{build_triples, triplet_loss, triplet_loss_chunked};
use molfuse::rng::SplitMix64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Graph 0 has 4 atoms, graph 1 has 3.
    let offsets = [0, 4, 7];
    let triples = build_triples(7, 7, &offsets, 11, false)?;
    println!("anchors   {:?}", triples.anchor);
    println!("negatives {:?}", triples.negative);

    let mut rng = SplitMix64::new(3);
    let mut rand = |n| (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>();
    let lm = Tensor::new(vec![7, 4], rand(28))?;
    let mp = Tensor::new(vec![7, 4], rand(28))?;
    let mut tape = Tape::new();
    let (a, t) = (tape.constant(lm.clone()), tape.constant(mp.clone()));
    let loss = triplet_loss(&mut tape, a, t, &triples, 1.0)?;
    println!("triplet loss {:.6}", tape.value(loss).item());

    let terms: Vec<_> = (0..triples.len())
        .map(|i| {
            (
                lm.row(triples.anchor[i]).to_vec(),
                mp.row(triples.positive[i]).to_vec(),
                mp.row(triples.negative[i]).to_vec(),
            )
        })
        .collect();
    for k in [1, 3, terms.len()] {
        println!("chunk {k}: {:.6}", triplet_loss_chunked(&terms, 1.0, k));
    }
    Ok(())
}
