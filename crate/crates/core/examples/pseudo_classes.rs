//! Pseudo-class label space and a fused batch: every unordered pair of real
//! classes gets its own label, every pair of domains its own pseudo domain.

use cdfscil::augment::{build_pseudo_batch, MixKind, MixOp, PseudoLabelSpace};
use cdfscil::data::{generate_synthetic, SyntheticSpec};
use cdfscil::rng;

fn main() -> cdfscil::Result<()> {
    let (train, _) = generate_synthetic(&SyntheticSpec::new(vec![2, 2, 1], 6, 2), 0)?;
    let space = PseudoLabelSpace::new(train.class_domain_map().to_vec())?;
    println!(
        "{} real classes in {} domains -> {} pseudo classes, {} pseudo domains",
        space.real_classes(),
        space.real_domains(),
        space.pseudo_classes(),
        space.pseudo_domains()
    );
    for p in space.real_classes()..space.total_classes() {
        let (a, b) = space.class_pair(p).expect("pseudo id");
        println!("  pseudo class {p:>2} = ({a}, {b}) in domain {}", space.domain_of(p).expect("in range"));
    }
    let mut r = rng::stream(0, "example");
    for op in [MixOp::mixup(1.0)?, MixOp::new(MixKind::Cutmix, 1.0, 0.5)?] {
        let batch = build_pseudo_batch(&train, &space, &op, 4, &mut r)?;
        let labels: Vec<_> = batch.iter().map(|s| (s.class_id, s.domain_id)).collect();
        println!("{:?}: (class, domain) {labels:?}", op.kind);
    }
    Ok(())
}
