//! Generate a small multi-domain synthetic dataset and print its layout.

use cdfscil::data::{generate_synthetic, SyntheticSpec};

fn main() -> cdfscil::Result<()> {
    let spec = SyntheticSpec::new(vec![3, 2, 4], 10, 5);
    let (train, test) = generate_synthetic(&spec, 0)?;
    println!("{} ({}): {} train, {} test", train.name(), train.shape(), train.len(), test.len());
    for (d, info) in train.domains().iter().enumerate() {
        let classes = train.domain_classes(d);
        let (lo, hi) = spec.band(d);
        println!("domain {d} '{}': classes {classes:?}, intensity band [{lo:.2}, {hi:.2}]", info.name);
    }
    let first = &train.samples()[0];
    let mean = first.pixels.iter().sum::<f64>() / first.pixels.len() as f64;
    println!("sample 0: class {}, domain {}, mean pixel {mean:.3}", first.class_id, first.domain_id);
    Ok(())
}
