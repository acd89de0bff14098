//! The six 2D MedMNIST subsets used for cross-domain sessions, and the two
//! session layouts built on them.
//!
//! Pools are expected in [`SUBSETS`] order. Converting the published `.npz`
//! arrays is an out-of-repo step: write each subset's `train_images`
//! (uint8, N×28×28 or N×28×28×3) as the images payload, `train_labels` as
//! u16 little-endian labels, and a constant domain-id payload of zeros,
//! with a manifest declaring one domain whose class count is the subset's.
//! Grayscale subsets must be expanded to the pool's channel count first.

use super::{generate_synthetic, DatasetPool, SyntheticSpec};
use crate::error::Result;
use crate::protocol::{SessionRole, SessionSchedule, SessionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Subset {
    pub name: &'static str,
    pub modality: &'static str,
    pub samples: usize,
    pub classes: usize,
    pub base: bool,
}

pub const SUBSETS: [Subset; 6] = [
    Subset { name: "PathMNIST", modality: "Colon Pathology", samples: 107_180, classes: 9, base: true },
    Subset { name: "DermaMNIST", modality: "Dermatoscope", samples: 10_015, classes: 7, base: true },
    Subset { name: "OrganAMNIST", modality: "Abdominal CT", samples: 58_850, classes: 11, base: true },
    Subset { name: "RetinaMNIST", modality: "Fundus Camera", samples: 1_600, classes: 5, base: false },
    Subset { name: "BreastMNIST", modality: "Breast Ultrasound", samples: 780, classes: 2, base: false },
    Subset { name: "BloodMNIST", modality: "Blood Cell Microscope", samples: 17_092, classes: 8, base: false },
];

pub const BASE_DATASETS: &str = "PathMNIST+DermaMNIST+OrganAMNIST";

pub fn base_class_count() -> usize {
    SUBSETS.iter().filter(|s| s.base).map(|s| s.classes).sum()
}

fn base_session() -> SessionSpec {
    let c = base_class_count();
    SessionSpec {
        name: "base".into(),
        dataset: Some(BASE_DATASETS.into()),
        class_ids: (0..c).collect(),
        ways: c,
        shots: None,
        role: SessionRole::Base,
    }
}

fn incremental(name: String, dataset: &str, class_ids: Vec<usize>) -> SessionSpec {
    SessionSpec {
        name,
        dataset: Some(dataset.into()),
        ways: class_ids.len(),
        class_ids,
        shots: Some(1),
        role: SessionRole::Incremental,
    }
}

/// 1-way 1-shot: fifteen sessions, one class each, Retina → Breast → Blood.
pub fn one_way_one_shot() -> SessionSchedule {
    let mut sessions = vec![base_session()];
    for subset in SUBSETS.iter().filter(|s| !s.base) {
        for c in 0..subset.classes {
            let b = sessions.len();
            sessions.push(incremental(format!("session-{b}"), subset.name, vec![c]));
        }
    }
    SessionSchedule::new(sessions).expect("static layout is valid")
}

/// Single-domain 1-shot: one session per incremental subset.
pub fn single_domain_one_shot() -> SessionSchedule {
    let mut sessions = vec![base_session()];
    for subset in SUBSETS.iter().filter(|s| !s.base) {
        sessions.push(incremental(
            subset.name.to_string(),
            subset.name,
            (0..subset.classes).collect(),
        ));
    }
    SessionSchedule::new(sessions).expect("static layout is valid")
}

/// Incremental class counts in session order, for synthetic stand-ins.
pub fn incremental_class_counts() -> Vec<usize> {
    SUBSETS.iter().filter(|s| !s.base).map(|s| s.classes).collect()
}

/// A synthetic pool with the subset names and class counts of [`SUBSETS`],
/// so both schedules above resolve against it. Each member is a
/// single-domain synthetic dataset drawn with its own derived seed.
pub fn synthetic_stand_in(
    height: usize,
    width: usize,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<DatasetPool> {
    let pairs = SUBSETS
        .iter()
        .map(|s| {
            let spec = SyntheticSpec {
                name: s.name.to_string(),
                height,
                width,
                ..SyntheticSpec::new(vec![s.classes], train_per_class, test_per_class)
            };
            generate_synthetic(&spec, crate::rng::derive_seed(seed, s.name))
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetPool::new(pairs)
}
