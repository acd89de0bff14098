//! Session schedules, base training, the frozen-backbone incremental phase
//! and the accuracy metrics.

mod metrics;
mod report;
mod run;
mod schedule;
mod state;
mod train;

pub use metrics::{compute_metrics, performance_drop, Metrics};
pub use report::{render_table, ProtocolReport, RunSeeds, SessionRecord};
pub use run::{run_protocol, run_sessions, ModelConfig, Precision, ProtocolConfig};
pub use schedule::{IncrementalLayout, SessionRole, SessionSchedule, SessionSpec};
pub use state::{
    count_correct, evaluate_embedded, extend_with_prototypes, EmbeddedSet, ProtocolState, SessionEvaluation,
};
pub use train::{train_base, BaseModel, EpochRecord, TrainOptions, TrainSummary};
