//! Save a dataset as manifest + payload files and load it back.

use cdfscil::data::{generate_synthetic, load_split, save_dataset, Split, SyntheticSpec};

fn main() -> cdfscil::Result<()> {
    let (train, _) = generate_synthetic(&SyntheticSpec::new(vec![2, 2], 4, 2), 1)?;
    let dir = std::env::temp_dir().join("cdfscil-manifest-example");
    let manifest = save_dataset(&train, &dir, "demo")?;
    println!("wrote {}", manifest.display());
    println!("{}", std::fs::read_to_string(&manifest).map_err(|e| cdfscil::Error::Format(e.to_string()))?);

    let back = load_split(&manifest, Split::Train)?;
    // pixels are stored as multiples of 1/255
    let worst = train
        .samples()
        .iter()
        .zip(back.samples())
        .flat_map(|(a, b)| a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("{} samples reloaded, max pixel change {worst:.5} (<= 0.5/255)", back.len());
    Ok(())
}
