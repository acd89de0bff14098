//! Finite-difference checks of every differentiable component.

use cdfscil::gradcheck::{run_gradcheck, Component, GradcheckOptions, DEFAULT_TOLERANCE};

fn main() -> cdfscil::Result<()> {
    let reports = run_gradcheck(&GradcheckOptions {
        trials: 20,
        seed: 0,
        tolerance: DEFAULT_TOLERANCE,
        components: Component::ALL.to_vec(),
    })?;
    for r in reports {
        println!("{r}");
    }
    Ok(())
}
