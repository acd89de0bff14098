//! Run the desk config with its baseline arm and print the PD table.
//! Pass seeds as arguments to override the config (default: 1).

use std::path::Path;

use cdfscil::experiment::{run_experiment, ExperimentConfig};

fn main() -> cdfscil::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/desk.toml");
    let mut cfg = ExperimentConfig::load(path)?;
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    cfg.run.seeds = if seeds.is_empty() { vec![1] } else { seeds };
    let out = std::env::temp_dir().join("cdfscil-ablation-example");
    let (summary, _) = run_experiment(&cfg, &[], Some(&out))?;
    print!("{}", summary.table());
    for arm in &summary.arms {
        println!("{}: PD {:.2} +- {:.2}", arm.arm, 100.0 * arm.pd_mean, 100.0 * arm.pd_std);
    }
    println!("reports under {}", out.join(&cfg.name).display());
    Ok(())
}
