//! The two MedMNIST session schedules, resolved against a synthetic pool
//! with the same subset names and class counts.

use cdfscil::data::{medmnist, split_sessions};

fn main() -> cdfscil::Result<()> {
    let pool = medmnist::synthetic_stand_in(8, 8, 4, 2, 0)?;
    for s in medmnist::SUBSETS {
        println!("{:<12} {:>2} classes", s.name, s.classes);
    }
    for (name, schedule) in [
        ("one-way 1-shot", medmnist::one_way_one_shot()),
        ("single-domain 1-shot", medmnist::single_domain_one_shot()),
    ] {
        let sessions = split_sessions(&pool, &schedule, 0)?;
        println!("{name}: {} sessions", sessions.len());
        for s in &sessions {
            println!("  {:<28} classes {:?}", s.name, s.classes);
        }
    }
    Ok(())
}
