//! Cross-domain few-shot class-incremental learning at desk scale.
//!
//! A base session spanning several image domains trains an embedding network
//! with cosine-margin losses (a global margin loss blended with a per-domain
//! margin loss) over real samples plus pseudo classes obtained by fusing
//! pairs of real images. The backbone is then frozen and each incremental
//! session appends one prototype row per new class, the normalized mean of
//! its few-shot embeddings. Accuracy is tracked per task after every session,
//! summarized as average accuracy `A_t` and performance dropping rate
//! `PD = A_0 - A_B`.
//!
//! Module map:
//!
//! - [`data`]: samples, datasets, the manifest + raw payload format, the
//!   synthetic multi-domain generator and session splitting.
//! - [`augment`]: mixup / cutmix / cutout, standard augmentations and the
//!   pseudo-class label space.
//! - [`embed`]: the embedding network with analytic backward, momentum SGD,
//!   freezing and checkpoints.
//! - [`loss`]: cosine classifier and the cross-entropy, margin and
//!   domain-margin objectives.
//! - [`protocol`]: schedules, base training, prototype extension, evaluation
//!   and metrics.
//! - [`experiment`]: TOML experiment configs and multi-seed/ablation runs.
//! - [`gradcheck`]: finite-difference suites for every differentiable piece.

pub mod augment;
pub mod data;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
