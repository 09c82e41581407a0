//! Time the attention core at doubling sequence lengths.

use molfuse::training::{attention_scaling, scaling_table};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = attention_scaling(&[64, 128, 256, 512], 64, 15, 0)?;
    print!("{}", scaling_table(&rows));
    Ok(())
}
