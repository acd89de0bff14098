use rand::seq::index;

use super::{Dataset, DatasetPool, LabeledSample};
use crate::error::{Error, Result};
use crate::protocol::{SessionRole, SessionSchedule};
use crate::rng;

/// Training data and own-class test partition of one session.
#[derive(Clone, Debug)]
pub struct SessionData {
    pub index: usize,
    pub name: String,
    pub role: SessionRole,
    /// Global class ids `Y^b`.
    pub classes: Vec<usize>,
    /// Training samples of `Y^b` only: everything for the base session,
    /// exactly `K` per class otherwise.
    pub train: Dataset,
    /// Test samples of `Y^b` only (task `b`'s partition).
    pub task_test: Dataset,
    /// Pool train indices drawn as shots, per class in `classes` order.
    /// Empty for the base session.
    pub shot_indices: Vec<Vec<usize>>,
}

impl SessionData {
    /// Cumulative test set of session `b`: the union of task partitions
    /// `0..=b`.
    pub fn cumulative_test(sessions: &[SessionData], b: usize) -> Dataset {
        let samples: Vec<LabeledSample> = sessions[..=b]
            .iter()
            .flat_map(|s| s.task_test.samples().iter().cloned())
            .collect();
        sessions[b].task_test.with_samples(samples)
    }
}

/// Partition a pool into sessions following `schedule`. Incremental shots
/// are a seeded draw without replacement from each class's training samples.
pub fn split_sessions(
    pool: &DatasetPool,
    schedule: &SessionSchedule,
    shot_seed: u64,
) -> Result<Vec<SessionData>> {
    let classes = schedule.resolve(pool)?;
    let train_index = pool.train().class_index();
    let test_index = pool.test().class_index();
    let mut rng = rng::stream(shot_seed, "shots");

    let mut out = Vec::with_capacity(classes.len());
    for (b, (spec, ids)) in schedule.sessions.iter().zip(classes).enumerate() {
        let mut train = Vec::new();
        let mut shot_indices = Vec::new();
        for &c in &ids {
            let available = &train_index[c];
            match spec.shots {
                None => train.extend(available.iter().map(|&i| pool.train().samples()[i].clone())),
                Some(k) => {
                    if available.len() < k {
                        return Err(Error::InsufficientData(format!(
                            "session {b} '{}': class {c} has {} training samples, {k} shots requested",
                            spec.name,
                            available.len()
                        )));
                    }
                    let mut picked: Vec<usize> = index::sample(&mut rng, available.len(), k)
                        .into_iter()
                        .map(|j| available[j])
                        .collect();
                    picked.sort_unstable();
                    train.extend(picked.iter().map(|&i| pool.train().samples()[i].clone()));
                    shot_indices.push(picked);
                }
            }
        }
        let task_test: Vec<LabeledSample> = ids
            .iter()
            .flat_map(|&c| test_index[c].iter().map(|&i| pool.test().samples()[i].clone()))
            .collect();
        out.push(SessionData {
            index: b,
            name: spec.name.clone(),
            role: spec.role,
            classes: ids,
            train: pool.train().with_samples(train),
            task_test: pool.test().with_samples(task_test),
            shot_indices,
        });
    }
    Ok(out)
}
