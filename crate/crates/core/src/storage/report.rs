//! Run reports: JSON for machines, a text table for people.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{AccuracyMatrix, AdaptLog};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// Every data file read, in read order.
    pub inputs: Vec<String>,
    /// Model snapshots read.
    pub models: Vec<String>,
    pub outputs: Vec<String>,
    pub accuracy: Option<AccuracyMatrix>,
    /// Accuracy of the last model on every test set.
    pub final_accuracies: Vec<f64>,
    pub average_accuracy: Option<f64>,
    pub backward_transfer: Option<f64>,
    pub adaptation: Option<AdaptLog>,
    pub warnings: Vec<String>,
    /// Seconds per phase. The only field allowed to differ between identical runs.
    pub wall_times: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: impl Into<String>) -> Self {
        RunReport {
            command: command.into(),
            ..RunReport::default()
        }
    }

    pub fn set_accuracy(&mut self, matrix: AccuracyMatrix) {
        self.average_accuracy = matrix.average_accuracy();
        self.backward_transfer = matrix.backward_transfer();
        self.final_accuracies = matrix.rows().last().cloned().unwrap_or_default();
        self.accuracy = Some(matrix);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(0, format!("bad report: {e}")))
    }

    /// The report with wall times cleared.
    pub fn without_timings(&self) -> Self {
        RunReport {
            wall_times: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("command: {}\n", self.command);
        for (k, v) in &self.seeds {
            out.push_str(&format!("seed {k}: {v}\n"));
        }
        if let Some(m) = &self.accuracy {
            out.push_str("\naccuracy matrix\n");
            out.push_str(&m.to_table());
        } else if !self.final_accuracies.is_empty() {
            out.push_str("\nfinal accuracies:");
            for a in &self.final_accuracies {
                out.push_str(&format!(" {a:.4}"));
            }
            out.push('\n');
        }
        if let Some(a) = self.average_accuracy {
            out.push_str(&format!("average accuracy: {a:.4}\n"));
        }
        if let Some(b) = self.backward_transfer {
            out.push_str(&format!("backward transfer: {b:+.4}\n"));
        }
        if let Some(log) = &self.adaptation {
            out.push_str("\ntask  read  kept  rows  mean_w\n");
            for t in &log.tasks {
                out.push_str(&format!(
                    "{:<5} {:>5} {:>5} {:>5}  {:.4}\n",
                    t.task_id, t.samples_read, t.retained, t.rows_used, t.mean_weight
                ));
            }
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        for (k, v) in &self.wall_times {
            out.push_str(&format!("time {k}: {v:.3}s\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_timing_strip() {
        let mut r = RunReport::new("eval");
        r.seeds.insert("rff".into(), 3);
        r.set_accuracy(AccuracyMatrix::from_rows(vec![vec![1.0], vec![0.5, 1.0]]).unwrap());
        r.wall_times.insert("total".into(), 0.25);
        let back = RunReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let mut other = r.clone();
        other.wall_times.insert("total".into(), 9.0);
        assert_eq!(other.without_timings().to_json(), r.without_timings().to_json());
        assert_eq!(r.average_accuracy, Some(0.75));
        assert_eq!(r.backward_transfer, Some(-0.5));
        assert!(r.to_text().contains("average accuracy: 0.7500"));
    }
}
