use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::compute_metrics;
use super::train::TrainSummary;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub index: usize,
    pub name: String,
    /// Global class ids introduced by this session.
    pub classes: Vec<usize>,
    /// Training sample indices drawn as shots, per class.
    pub shots: Vec<Vec<usize>>,
    /// Classifier rows after the session.
    pub classifier_rows: usize,
    /// Accuracy on the union of all test partitions seen so far.
    pub cumulative_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSeeds {
    /// Network initialization and base training.
    pub model: u64,
    /// Incremental shot draw.
    pub shots: u64,
}

/// Everything a protocol run produces. Contains no timings, so identical
/// inputs serialize to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub dataset: String,
    pub precision: String,
    pub seeds: RunSeeds,
    /// Resolved configuration the run used.
    pub config: serde_json::Value,
    pub base_training: Option<TrainSummary>,
    /// Backbone checksum right after freezing and after the last session.
    pub checksum_frozen: String,
    pub checksum_final: String,
    pub sessions: Vec<SessionRecord>,
    /// `a_{t,i}`, lower-triangular.
    pub accuracy_matrix: Vec<Vec<f64>>,
    /// `A_t` per session.
    pub average_accuracy: Vec<f64>,
    pub pd: f64,
}

impl ProtocolReport {
    /// Recompute `A_t` and PD from the stored matrix and check they agree.
    pub fn validate(&self) -> Result<()> {
        let m = compute_metrics(&self.accuracy_matrix)?;
        if m.average != self.average_accuracy || m.pd != self.pd {
            return Err(Error::Validation("report metrics disagree with its accuracy matrix".into()));
        }
        if self.sessions.len() != self.accuracy_matrix.len() {
            return Err(Error::Validation("report session list and accuracy matrix differ in length".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: ProtocolReport =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        report.validate()?;
        Ok(report)
    }

    /// Flat `session,task,accuracy` export of the accuracy matrix.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("session,task,accuracy\n");
        for (t, row) in self.accuracy_matrix.iter().enumerate() {
            for (i, a) in row.iter().enumerate() {
                writeln!(out, "{t},{i},{a}").expect("string write");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// One-row session table: `A_t` in percent per session, then PD.
    pub fn table(&self, label: &str) -> String {
        render_table(&[(label.to_string(), self.average_accuracy.clone(), self.pd)])
    }
}

/// Session accuracy table; each row is `(label, A_t per session, PD)` in
/// fractions, printed as percentages.
pub fn render_table(rows: &[(String, Vec<f64>, f64)]) -> String {
    let sessions = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Session".len());
    let mut out = format!("{:<width$}", "Session");
    for s in 0..sessions {
        write!(out, " {s:>6}").expect("string write");
    }
    out.push_str("     PD\n");
    for (label, acc, pd) in rows {
        write!(out, "{label:<width$}").expect("string write");
        for s in 0..sessions {
            match acc.get(s) {
                Some(a) => write!(out, " {:>6.2}", 100.0 * a),
                None => write!(out, " {:>6}", "-"),
            }
            .expect("string write");
        }
        writeln!(out, " {:>6.2}", 100.0 * pd).expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ProtocolReport {
        let matrix = vec![vec![0.9], vec![0.8, 0.6]];
        let m = compute_metrics(&matrix).unwrap();
        ProtocolReport {
            dataset: "synthetic".into(),
            precision: "f64".into(),
            seeds: RunSeeds { model: 1, shots: 2 },
            config: serde_json::json!({"loss": {"lambda": 0.8}}),
            base_training: None,
            checksum_frozen: "ab".into(),
            checksum_final: "ab".into(),
            sessions: vec![
                SessionRecord {
                    index: 0,
                    name: "base".into(),
                    classes: vec![0, 1],
                    shots: vec![],
                    classifier_rows: 2,
                    cumulative_accuracy: 0.9,
                },
                SessionRecord {
                    index: 1,
                    name: "s1".into(),
                    classes: vec![2],
                    shots: vec![vec![4]],
                    classifier_rows: 3,
                    cumulative_accuracy: 0.75,
                },
            ],
            accuracy_matrix: matrix,
            average_accuracy: m.average,
            pd: m.pd,
        }
    }

    #[test]
    fn csv_lists_every_cell() {
        assert_eq!(report().to_csv(), "session,task,accuracy\n0,0,0.9\n1,0,0.8\n1,1,0.6\n");
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let r = report();
        r.write_json(&path).unwrap();
        assert_eq!(ProtocolReport::read_json(&path).unwrap(), r);

        let mut bad = r.clone();
        bad.pd = 0.0;
        bad.write_json(&path).unwrap();
        assert!(matches!(ProtocolReport::read_json(&path), Err(Error::Validation(_))));
        fs::write(&path, "{").unwrap();
        assert!(matches!(ProtocolReport::read_json(&path), Err(Error::Format(_))));
    }

    #[test]
    fn table_layout() {
        let t = report().table("Ours");
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Session      0      1     PD");
        assert_eq!(lines[1], "Ours     90.00  70.00  20.00");
    }
}
