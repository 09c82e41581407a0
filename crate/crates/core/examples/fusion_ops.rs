//! Apply the four fusion operators to a pair of small embeddings.

use molfuse::autodiff::{ParamStore, Tape, Tensor};
use molfuse::integration::{fuse, FusionOp};
use molfuse::rng::SplitMix64;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let h1 = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0])?;
    let h2 = Tensor::new(vec![2, 3], vec![0.5, 1.0, 0.5, -4.0, 2.0, 2.0])?;
    let mut store = ParamStore::new();
    let mut rng = SplitMix64::new(0);
    FusionOp::Gate.init(&mut store, "gate", 3, &mut rng);
    for op in FusionOp::ALL {
        let mut tape = Tape::new();
        let a = tape.constant(h1.clone());
        let b = tape.constant(h2.clone());
        let out = fuse(&mut tape, &store, a, b, op, "gate")?;
        println!("{op:>6} (width {}): {:?}", op.out_width(3), tape.value(out).data());
    }
    Ok(())
}
