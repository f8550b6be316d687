//! Top-k accuracy, confusion matrices and accuracy-versus-observation-length
//! reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SequenceSample;
use crate::error::{Error, Result};

pub const TOP_K: [usize; 3] = [1, 3, 5];

/// Mean of `1{label ∈ pred[..k]}`.
pub fn topk_accuracy(preds: &[Vec<usize>], labels: &[usize], k: usize) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty set".into()));
    }
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| p.iter().take(k).any(|x| x == *l))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `m[i][j]` counts label `i + 1` predicted as `j + 1`.
pub fn confusion_matrix(pred: &[usize], labels: &[usize], n_beams: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != labels.len() {
        return Err(Error::shape(format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    let mut m = vec![vec![0u64; n_beams]; n_beams];
    for (&p, &l) in pred.iter().zip(labels) {
        for v in [p, l] {
            if v == 0 || v > n_beams {
                return Err(Error::IndexOutOfRange { index: v, max: n_beams });
            }
        }
        m[l - 1][p - 1] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub model: String,
    pub t_obs: usize,
    pub k: usize,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub model: String,
    pub t_obs: usize,
    pub matrix: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_beams: usize,
    pub n_test: usize,
    pub t_obs: Vec<usize>,
    pub ks: Vec<usize>,
    pub accuracy: Vec<AccuracyPoint>,
    pub confusion: Vec<ConfusionReport>,
}

impl EvalReport {
    pub fn new(n_beams: usize, n_test: usize, t_obs: &[usize]) -> Self {
        Self {
            n_beams,
            n_test,
            t_obs: t_obs.to_vec(),
            ks: TOP_K.to_vec(),
            accuracy: Vec::new(),
            confusion: Vec::new(),
        }
    }

    /// Adds one model's curve. `predict(t_obs)` returns a ranked list of at
    /// least five beams for every test sample, in order. A confusion matrix
    /// of top-1 predictions is kept at `confusion_t_obs` when it is one of
    /// the evaluated lengths.
    pub fn add_model<F>(&mut self, model: &str, test: &[SequenceSample], confusion_t_obs: Option<usize>, mut predict: F) -> Result<()>
    where
        F: FnMut(usize) -> Result<Vec<Vec<usize>>>,
    {
        let labels: Vec<usize> = test.iter().map(|s| s.label()).collect();
        for &t_obs in &self.t_obs {
            let preds = predict(t_obs)?;
            for &k in &self.ks {
                self.accuracy.push(AccuracyPoint {
                    model: model.to_string(),
                    t_obs,
                    k,
                    accuracy: topk_accuracy(&preds, &labels, k)?,
                    n: labels.len(),
                });
            }
            if confusion_t_obs == Some(t_obs) {
                let top1: Vec<usize> = preds
                    .iter()
                    .map(|p| p.first().copied().ok_or_else(|| Error::shape("empty prediction list")))
                    .collect::<Result<_>>()?;
                self.confusion.push(ConfusionReport {
                    model: model.to_string(),
                    t_obs,
                    matrix: confusion_matrix(&top1, &labels, self.n_beams)?,
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, model: &str, t_obs: usize, k: usize) -> Option<f64> {
        self.accuracy
            .iter()
            .find(|p| p.model == model && p.t_obs == t_obs && p.k == k)
            .map(|p| p.accuracy)
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.accuracy {
            if !(0.0..=1.0).contains(&p.accuracy) {
                return Err(Error::Degenerate(format!(
                    "{} accuracy {} at T_o={} k={} outside [0, 1]",
                    p.model, p.accuracy, p.t_obs, p.k
                )));
            }
        }
        for c in &self.confusion {
            let total: u64 = c.matrix.iter().flatten().sum();
            if total != self.n_test as u64 {
                return Err(Error::Degenerate(format!(
                    "{} confusion matrix holds {total} samples, expected {}",
                    c.model, self.n_test
                )));
            }
        }
        Ok(())
    }

    pub fn write_accuracy_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "model,t_obs,k,accuracy,n")?;
        for p in &self.accuracy {
            writeln!(w, "{},{},{},{},{}", p.model, p.t_obs, p.k, p.accuracy, p.n)?;
        }
        Ok(())
    }

    /// Long format: one row per non-zero cell.
    pub fn write_confusion_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "model,t_obs,label,predicted,count")?;
        for c in &self.confusion {
            for (i, row) in c.matrix.iter().enumerate() {
                for (j, &n) in row.iter().enumerate() {
                    if n > 0 {
                        writeln!(w, "{},{},{},{},{}", c.model, c.t_obs, i + 1, j + 1, n)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Validates, then writes `report.json`, `accuracy_vs_to.csv` and
    /// `confusion.csv` into `dir`. Returns the sha256 of each file by name.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<(String, String)>> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        let mut acc = Vec::new();
        self.write_accuracy_csv(&mut acc).map_err(|e| Error::io(dir, e))?;
        let mut conf = Vec::new();
        self.write_confusion_csv(&mut conf).map_err(|e| Error::io(dir, e))?;
        [
            ("report.json", json),
            ("accuracy_vs_to.csv", acc),
            ("confusion.csv", conf),
        ]
        .into_iter()
        .map(|(name, bytes)| Ok((name.to_string(), crate::dataset::write_file(&dir.join(name), &bytes)?)))
        .collect()
    }
}
