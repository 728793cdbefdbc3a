//! Confusion matrices, classification rates and throughput.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("true and predicted label counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyConfusion,
}

/// `c[t][p]` counts items of true class `t` predicted as `p`.
pub type Confusion = Vec<Vec<u64>>;

pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Confusion, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch(truth.len(), predicted.len()));
    }
    let mut c = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= classes) {
            return Err(EvalError::LabelOutOfRange { label, classes });
        }
        c[t][p] += 1;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Classes present in the truth but never predicted (precision 0 by convention).
    pub never_predicted: Vec<usize>,
}

/// Accuracy plus per-class and macro precision and recall.
///
/// Zero denominators give 0. Macro averages run over classes with at least
/// one true item; precision also keeps classes that were only predicted.
pub fn metrics(c: &Confusion) -> Result<Metrics, EvalError> {
    let n = c.len();
    let total: u64 = c.iter().flatten().sum();
    if total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    let rows: Vec<u64> = c.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..n).map(|j| c.iter().map(|r| r[j]).sum()).collect();
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision: Vec<f64> = (0..n).map(|k| ratio(c[k][k], cols[k])).collect();
    let recall: Vec<f64> = (0..n).map(|k| ratio(c[k][k], rows[k])).collect();
    let mean = |ks: Vec<usize>, v: &[f64]| {
        if ks.is_empty() {
            0.0
        } else {
            ks.iter().map(|&k| v[k]).sum::<f64>() / ks.len() as f64
        }
    };
    let present: Vec<usize> = (0..n).filter(|&k| rows[k] > 0).collect();
    let seen: Vec<usize> = (0..n).filter(|&k| rows[k] > 0 || cols[k] > 0).collect();
    Ok(Metrics {
        accuracy: ratio((0..n).map(|k| c[k][k]).sum(), total),
        macro_precision: mean(seen, &precision),
        macro_recall: mean(present.clone(), &recall),
        never_predicted: present.into_iter().filter(|&k| cols[k] == 0).collect(),
        precision,
        recall,
    })
}

/// Seconds of video classified per second of wall time.
pub fn realtime_factor(num_items: usize, frames_per_item: usize, fps: f64, wall_seconds: f64) -> f64 {
    (num_items as f64 * frames_per_item as f64 / fps) / wall_seconds
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub wall_time_seconds: f64,
    pub frames_processed: u64,
    pub fps: f64,
    pub real_time_factor: f64,
}

impl EvalReport {
    /// `frames_per_item` is the classified window length.
    pub fn new(
        class_names: Vec<String>,
        truth: &[usize],
        predicted: &[usize],
        frames_per_item: usize,
        fps: f64,
        wall_time_seconds: f64,
    ) -> Result<Self, EvalError> {
        let confusion = confusion(truth, predicted, class_names.len())?;
        let metrics = metrics(&confusion)?;
        Ok(Self {
            class_names,
            confusion,
            metrics,
            wall_time_seconds,
            frames_processed: (truth.len() * frames_per_item) as u64,
            fps,
            real_time_factor: realtime_factor(truth.len(), frames_per_item, fps, wall_time_seconds),
        })
    }

    /// Plain-text table: confusion matrix then per-class and summary rates.
    pub fn table(&self) -> String {
        let w = self.class_names.iter().map(|s| s.len()).max().unwrap_or(0).max(9);
        let mut out = format!("{:>w$}", "true\\pred");
        for k in 0..self.class_names.len() {
            out += &format!(" {k:>6}");
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            out += &format!("{name:>w$}");
            for v in row {
                out += &format!(" {v:>6}");
            }
            out.push('\n');
        }
        out += &format!("\n{:>w$} {:>9} {:>9}\n", "class", "precision", "recall");
        for (k, name) in self.class_names.iter().enumerate() {
            out += &format!(
                "{name:>w$} {:>9.4} {:>9.4}\n",
                self.metrics.precision[k], self.metrics.recall[k]
            );
        }
        let m = &self.metrics;
        out += &format!("\naccuracy         {:.4}\n", m.accuracy);
        out += &format!("macro precision  {:.4}  (reported as performance)\n", m.macro_precision);
        out += &format!("macro recall     {:.4}\n", m.macro_recall);
        if !m.never_predicted.is_empty() {
            let names: Vec<&str> = m.never_predicted.iter().map(|&k| self.class_names[k].as_str()).collect();
            out += &format!("never predicted  {}\n", names.join(", "));
        }
        out += &format!(
            "wall time {:.6} s, {} frames at {} fps, real-time factor {:.1}\n",
            self.wall_time_seconds, self.frames_processed, self.fps, self.real_time_factor
        );
        out
    }
}
