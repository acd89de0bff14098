use serde::{Deserialize, Serialize};

use super::report::{ProtocolReport, RunSeeds, SessionRecord};
use super::state::ProtocolState;
use super::train::{train_base, TrainOptions};
use super::SessionSchedule;
use crate::data::{split_sessions, DatasetPool, SessionData};
use crate::embed::{ArchKind, Architecture, EmbeddingNetwork, Real};
use crate::error::Result;
use crate::loss::LossConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: ArchKind,
    pub embed_dim: usize,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: ArchKind::Conv,
            embed_dim: 64,
            precision: Precision::F64,
        }
    }
}

/// Everything `run_protocol` needs besides data, schedule and seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainOptions,
}

/// Train on the base session, freeze, then extend and evaluate session by
/// session.
pub fn run_protocol(
    pool: &DatasetPool,
    schedule: &SessionSchedule,
    cfg: &ProtocolConfig,
    seeds: &RunSeeds,
) -> Result<ProtocolReport> {
    let sessions = split_sessions(pool, schedule, seeds.shots)?;
    match cfg.model.precision {
        Precision::F64 => run_sessions::<f64>(pool, &sessions, cfg, seeds),
        Precision::F32 => run_sessions::<f32>(pool, &sessions, cfg, seeds),
    }
}

/// `run_protocol` over pre-split sessions with a fixed numeric type.
pub fn run_sessions<T: Real>(
    pool: &DatasetPool,
    sessions: &[SessionData],
    cfg: &ProtocolConfig,
    seeds: &RunSeeds,
) -> Result<ProtocolReport> {
    let arch = Architecture::preset(cfg.model.arch, pool.shape(), cfg.model.embed_dim);
    let net = EmbeddingNetwork::<T>::new(arch, crate::rng::derive_seed(seeds.model, "init"))?;
    let base = train_base(&sessions[0], net, &cfg.loss, &cfg.train, crate::rng::derive_seed(seeds.model, "train"))?;
    let mut net = base.network;
    net.freeze();
    let checksum_frozen = net.checksum();

    let mut state = ProtocolState::new(net, base.classifier, &sessions[0], cfg.train.batch_size)?;
    let mut records = vec![record(&sessions[0], state.classifier().rows(), state.cumulative_accuracy()[0])];
    for session in &sessions[1..] {
        let eval = state.advance(session)?;
        log::info!(
            "session {} '{}': per-task {:?}, cumulative {:.4}",
            session.index,
            session.name,
            eval.per_task,
            eval.cumulative
        );
        records.push(record(session, state.classifier().rows(), eval.cumulative));
    }
    let metrics = state.metrics()?;
    let accuracy_matrix = state.accuracy_matrix().to_vec();
    let checksum_final = state.embedder().checksum();
    Ok(ProtocolReport {
        dataset: pool.train().name().to_string(),
        precision: T::NAME.to_string(),
        seeds: seeds.clone(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        base_training: Some(base.summary),
        checksum_frozen,
        checksum_final,
        sessions: records,
        accuracy_matrix,
        average_accuracy: metrics.average,
        pd: metrics.pd,
    })
}

fn record(session: &SessionData, rows: usize, cumulative: f64) -> SessionRecord {
    SessionRecord {
        index: session.index,
        name: session.name.clone(),
        classes: session.classes.clone(),
        shots: session.shot_indices.clone(),
        classifier_rows: rows,
        cumulative_accuracy: cumulative,
    }
}
