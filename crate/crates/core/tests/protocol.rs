use cdfscil::data::{
    generate_synthetic, load_split, save_dataset, split_sessions, DatasetPool, SessionData, Split, SyntheticSpec,
};
use cdfscil::embed::{read_checkpoint, write_checkpoint, Architecture, EmbeddingNetwork};
use cdfscil::loss::LossConfig;
use cdfscil::protocol::{
    compute_metrics, run_protocol, train_base, IncrementalLayout, ProtocolConfig, ProtocolReport, ProtocolState,
    RunSeeds, SessionSchedule, TrainOptions,
};
use cdfscil::Error;

fn pool() -> DatasetPool {
    let spec = SyntheticSpec {
        height: 8,
        width: 8,
        ..SyntheticSpec::new(vec![3, 2, 3, 1], 8, 3)
    };
    let (train, test) = generate_synthetic(&spec, 5).unwrap();
    DatasetPool::single(train, test).unwrap()
}

fn small_config() -> ProtocolConfig {
    let mut cfg = ProtocolConfig::default();
    cfg.model.arch = cdfscil::embed::ArchKind::Affine;
    cfg.model.embed_dim = 10;
    cfg.train = TrainOptions {
        epochs: 3,
        batch_size: 16,
        pseudo_per_batch: 4,
        ..TrainOptions::default()
    };
    cfg
}

#[test]
fn report_shapes_follow_the_schedule() {
    let pool = pool();
    let schedule = SessionSchedule::from_domains(&pool, &[0, 1], &[2, 3], IncrementalLayout::OneWay, 1).unwrap();
    let sessions = split_sessions(&pool, &schedule, 0).unwrap();
    let report = run_protocol(&pool, &schedule, &small_config(), &RunSeeds { model: 0, shots: 0 }).unwrap();
    report.validate().unwrap();

    assert_eq!(report.sessions.len(), 5);
    let mut rows = 0;
    for (b, (rec, s)) in report.sessions.iter().zip(&sessions).enumerate() {
        rows += s.classes.len();
        assert_eq!(rec.classifier_rows, rows);
        assert_eq!(rec.classes, s.classes);
        assert_eq!(report.accuracy_matrix[b].len(), b + 1);
        let cumulative = SessionData::cumulative_test(&sessions, b);
        let own: usize = sessions[..=b].iter().map(|s| s.task_test.len()).sum();
        assert_eq!(cumulative.len(), own);
    }
    assert_eq!(report.checksum_frozen, report.checksum_final);
    let summary = report.base_training.as_ref().unwrap();
    assert_eq!(summary.real_classes, 5);
    assert_eq!(summary.pseudo_classes, 10);
    assert!(summary.epochs_run <= 3);
    let m = compute_metrics(&report.accuracy_matrix).unwrap();
    assert_eq!(m.pd, report.pd);
}

#[test]
fn report_survives_disk_roundtrip() {
    let pool = pool();
    let schedule = SessionSchedule::from_domains(&pool, &[0, 1], &[2, 3], IncrementalLayout::SingleDomain, 1).unwrap();
    let report = run_protocol(&pool, &schedule, &small_config(), &RunSeeds { model: 1, shots: 1 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.write_json(&path).unwrap();
    let back = ProtocolReport::read_json(&path).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.to_json(), report.to_json());
}

#[test]
fn saved_manifests_reproduce_the_run() {
    let pool = pool();
    let dir = tempfile::tempdir().unwrap();
    let train = save_dataset(pool.train(), dir.path(), "p").unwrap();
    let test = save_dataset(pool.test(), dir.path(), "p").unwrap();
    let reloaded = DatasetPool::single(
        load_split(&train, Split::Train).unwrap(),
        load_split(&test, Split::Test).unwrap(),
    )
    .unwrap();
    // Pixels are stored quantized, so compare two runs over the reloaded pool.
    let again = DatasetPool::single(
        load_split(&train, Split::Train).unwrap(),
        load_split(&test, Split::Test).unwrap(),
    )
    .unwrap();
    let schedule = SessionSchedule::from_domains(&reloaded, &[0, 1], &[2, 3], IncrementalLayout::OneWay, 1).unwrap();
    let seeds = RunSeeds { model: 2, shots: 2 };
    let a = run_protocol(&reloaded, &schedule, &small_config(), &seeds).unwrap();
    let b = run_protocol(&again, &schedule, &small_config(), &seeds).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(reloaded.num_classes(), pool.num_classes());
    assert_eq!(reloaded.class_domain_map(), pool.class_domain_map());
}

#[test]
fn checkpointed_backbone_embeds_identically() {
    let pool = pool();
    let schedule = SessionSchedule::from_domains(&pool, &[0, 1], &[2, 3], IncrementalLayout::OneWay, 1).unwrap();
    let sessions = split_sessions(&pool, &schedule, 0).unwrap();
    let net = EmbeddingNetwork::<f64>::new(Architecture::affine(pool.shape(), &[16], 10), 0).unwrap();
    let base = train_base(&sessions[0], net, &LossConfig::default(), &small_config().train, 0).unwrap();
    let mut net = base.network;
    net.freeze();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("backbone.ckpt");
    write_checkpoint(&net, &path).unwrap();
    let mut restored: EmbeddingNetwork<f64> = read_checkpoint(&path).unwrap();
    restored.freeze();
    assert_eq!(restored.checksum(), net.checksum());

    let run = |embedder: EmbeddingNetwork<f64>| {
        let mut state = ProtocolState::new(embedder, base.classifier.clone(), &sessions[0], 32).unwrap();
        for s in &sessions[1..] {
            state.advance(s).unwrap();
        }
        (state.accuracy_matrix().to_vec(), state.classifier().weights().to_vec())
    };
    assert_eq!(run(net), run(restored));
}

#[test]
fn incremental_phase_requires_a_frozen_backbone() {
    let pool = pool();
    let schedule = SessionSchedule::from_domains(&pool, &[0, 1], &[2, 3], IncrementalLayout::OneWay, 1).unwrap();
    let sessions = split_sessions(&pool, &schedule, 0).unwrap();
    let net = EmbeddingNetwork::<f64>::new(Architecture::affine(pool.shape(), &[], 10), 0).unwrap();
    let base = train_base(&sessions[0], net, &LossConfig::default(), &small_config().train, 0).unwrap();
    let err = ProtocolState::new(base.network, base.classifier, &sessions[0], 32).err().unwrap();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn sessions_must_arrive_in_order() {
    let pool = pool();
    let schedule = SessionSchedule::from_domains(&pool, &[0, 1], &[2, 3], IncrementalLayout::OneWay, 1).unwrap();
    let sessions = split_sessions(&pool, &schedule, 0).unwrap();
    let net = EmbeddingNetwork::<f64>::new(Architecture::affine(pool.shape(), &[], 10), 0).unwrap();
    let base = train_base(&sessions[0], net, &LossConfig::default(), &small_config().train, 0).unwrap();
    let mut net = base.network;
    net.freeze();
    let mut state = ProtocolState::new(net, base.classifier, &sessions[0], 32).unwrap();
    assert!(state.advance(&sessions[2]).is_err());
    state.advance(&sessions[1]).unwrap();
    assert!(state.advance(&sessions[1]).is_err());
}
