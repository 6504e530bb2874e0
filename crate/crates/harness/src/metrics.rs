//! Run reports: accuracy, per-class breakdown, loss history, wall clock.

use std::fmt;

#[derive(Clone, Debug, Default)]
pub struct ClassAccuracy {
    pub name: String,
    pub correct: usize,
    pub total: usize,
}

impl ClassAccuracy {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MetricsReport {
    /// Exactly `correct / total` over the evaluated set.
    pub overall_accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// Mean training loss per epoch; empty for evaluation-only reports.
    pub loss_curve: Vec<f64>,
    pub wall_clock_secs: f64,
    pub config_echo: String,
    /// Learning rate applied at the first and last optimizer step.
    pub lr_first: f64,
    pub lr_last: f64,
    /// Predicted and true labels in dataset order, for independent recounts.
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

impl MetricsReport {
    pub fn correct(&self) -> usize {
        self.per_class.iter().map(|c| c.correct).sum()
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().map(|c| c.total).sum()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "accuracy {:.2}% ({}/{})",
            100.0 * self.overall_accuracy,
            self.correct(),
            self.total()
        )?;
        for c in &self.per_class {
            writeln!(
                f,
                "  {:<10} {:>6.2}% ({}/{})",
                c.name,
                100.0 * c.accuracy(),
                c.correct,
                c.total
            )?;
        }
        if !self.loss_curve.is_empty() {
            writeln!(
                f,
                "final loss {:.4} over {} epochs",
                self.loss_curve.last().unwrap(),
                self.loss_curve.len()
            )?;
        }
        write!(f, "wall clock {:.1}s", self.wall_clock_secs)
    }
}
