//! Run reports: loss curves, WER tables and the configuration snapshot.

use super::eval::WerRow;
use crate::nn::Phase;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub phase: Phase,
    /// Global update count at the end of the logging window.
    pub step: u64,
    /// Mean per-utterance loss over the window.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub curves: BTreeMap<String, Vec<LossPoint>>,
    pub wer: Vec<WerRow>,
    pub metrics: BTreeMap<String, f64>,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    pub fn new(name: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        ExperimentReport {
            name: name.to_string(),
            seed,
            config,
            curves: BTreeMap::new(),
            wer: Vec::new(),
            metrics: BTreeMap::new(),
            wall_clock_s: 0.0,
        }
    }

    /// Row for `set` in the WER table.
    pub fn wer_of(&self, set: &str) -> Option<f64> {
        self.wer.iter().find(|r| r.set == set).map(|r| r.wer)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", WerRow::CSV_HEADER);
        for r in &self.wer {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment {} (seed {})", self.name, self.seed);
        let _ = writeln!(s, "wall clock {:.1} s", self.wall_clock_s);
        let _ = writeln!(s, "\n{:<28} {:>8} {:>6} {:>6} {:>6} {:>7}", "set", "WER%", "sub", "ins", "del", "words");
        for r in &self.wer {
            let _ = writeln!(
                s,
                "{:<28} {:>8.2} {:>6} {:>6} {:>6} {:>7}",
                r.set, r.wer, r.subs, r.ins, r.dels, r.ref_words
            );
        }
        if !self.metrics.is_empty() {
            let _ = writeln!(s, "\nmetrics");
            for (k, v) in &self.metrics {
                let _ = writeln!(s, "  {k} = {v:.6}");
            }
        }
        for (name, curve) in &self.curves {
            if let Some(last) = curve.last() {
                let _ = writeln!(s, "\n{name}: {} log points, final loss {:.4} at step {}", curve.len(), last.loss, last.step);
            }
        }
        let _ = writeln!(s, "\nconfig");
        for (k, v) in &self.config {
            let _ = writeln!(s, "  {k} = {v}");
        }
        s
    }

    /// Write `<name>.csv`, `<name>.txt` and `<name>.json` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Input(e.to_string()))?;
        for (ext, body) in [("csv", self.to_csv()), ("txt", self.to_text()), ("json", json)] {
            let p = dir.join(format!("{}.{ext}", self.name));
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
