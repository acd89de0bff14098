//! Write a frozen backbone to disk and restore it bit for bit.

use cdfscil::data::Shape;
use cdfscil::embed::{read_checkpoint, write_checkpoint, Architecture, EmbeddingNetwork};

fn main() -> cdfscil::Result<()> {
    let arch = Architecture::conv(Shape::new(16, 16, 1), &[8], &[32], 16);
    let mut net = EmbeddingNetwork::<f64>::new(arch, 9)?;
    net.freeze();
    let path = std::env::temp_dir().join("cdfscil-example.ckpt");
    write_checkpoint(&net, &path)?;
    let restored: EmbeddingNetwork<f64> = read_checkpoint(&path)?;
    println!("{} parameters, architecture {}", restored.num_params(), restored.architecture().descriptor());
    println!("checksum {}", net.checksum());
    println!("restored matches: {}", restored.params() == net.params());
    println!("frozen network refuses parameter access: {}", net.params_mut().is_err());
    Ok(())
}
