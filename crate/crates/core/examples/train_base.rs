//! Base-session training with pseudo classes and early stopping.

use cdfscil::data::{generate_synthetic, split_sessions, DatasetPool, SyntheticSpec};
use cdfscil::embed::{ArchKind, Architecture, EmbeddingNetwork};
use cdfscil::loss::LossConfig;
use cdfscil::protocol::{train_base, IncrementalLayout, SessionSchedule, TrainOptions};

fn main() -> cdfscil::Result<()> {
    let spec = SyntheticSpec::new(vec![3, 3, 2], 30, 10);
    let (train, test) = generate_synthetic(&spec, 4)?;
    let pool = DatasetPool::single(train, test)?;
    let schedule = SessionSchedule::from_domains(&pool, &[0, 1], &[2], IncrementalLayout::SingleDomain, 1)?;
    let sessions = split_sessions(&pool, &schedule, 0)?;

    let net = EmbeddingNetwork::<f64>::new(Architecture::preset(ArchKind::Conv, pool.shape(), 32), 0)?;
    let mut opts = TrainOptions {
        batch_size: 32,
        epochs: 15,
        pseudo_per_batch: 8,
        ..TrainOptions::default()
    };
    opts.augment.flip = false;
    let model = train_base(&sessions[0], net, &LossConfig::default(), &opts, 0)?;
    for e in &model.summary.history {
        let val = e.val_accuracy.map_or("-".into(), |v| format!("{:.3}", v));
        println!("epoch {:>2}: loss {:.4} (L_A {:.4}, L_D {:.4}) val {val}", e.epoch, e.loss, e.loss_a, e.loss_d);
    }
    let s = &model.summary;
    println!(
        "best epoch {} of {}; {} real + {} pseudo rows trained, {} kept",
        s.best_epoch,
        s.epochs_run,
        s.real_classes,
        s.pseudo_classes,
        model.classifier.rows()
    );
    Ok(())
}
