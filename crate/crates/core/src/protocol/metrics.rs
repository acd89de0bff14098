use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average accuracy after every session plus the performance dropping rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `A_t`: mean of the per-task accuracies measured after session `t`.
    pub average: Vec<f64>,
    /// `A_0 − A_B`.
    pub pd: f64,
}

/// Metrics of a lower-triangular accuracy matrix: row `t` holds `a_{t,i}`
/// for tasks `i = 0..=t`.
pub fn compute_metrics(matrix: &[Vec<f64>]) -> Result<Metrics> {
    if matrix.is_empty() {
        return Err(Error::Validation("accuracy matrix has no sessions".into()));
    }
    for (t, row) in matrix.iter().enumerate() {
        if row.len() != t + 1 {
            return Err(Error::Validation(format!(
                "accuracy row {t} has {} entries, expected {}",
                row.len(),
                t + 1
            )));
        }
        if let Some(a) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Validation(format!("accuracy {a} in row {t} is outside [0, 1]")));
        }
    }
    let average: Vec<f64> = matrix.iter().map(|row| mean(row)).collect();
    let pd = average[0] - average[average.len() - 1];
    Ok(Metrics { average, pd })
}

/// PD of a sequence of per-session accuracies (any scale).
pub fn performance_drop(session_accuracies: &[f64]) -> Option<f64> {
    Some(session_accuracies.first()? - session_accuracies.last()?)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
