use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean squared hinge loss over the epoch's minibatches.
    pub train_cost: f64,
    pub valid_error: f64,
    pub test_error: f64,
    pub learning_rate: f64,
    pub wall_seconds: f64,
}

/// One row per completed epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl RunMetrics {
    /// Epoch with the lowest validation error (earliest on ties).
    pub fn best(&self) -> Option<&EpochMetrics> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochMetrics>, e| match best {
                Some(b) if b.valid_error <= e.valid_error => Some(b),
                _ => Some(e),
            })
    }

    /// Deterministic columns only: identical runs give identical text.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_cost,valid_error,test_error,learning_rate\n");
        for e in &self.epochs {
            writeln!(
                s,
                "{},{:?},{:?},{:?},{:?}",
                e.epoch, e.train_cost, e.valid_error, e.test_error, e.learning_rate
            )
            .unwrap();
        }
        s
    }

    /// Wall-clock seconds per epoch, kept apart from the deterministic CSV.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,wall_seconds\n");
        for e in &self.epochs {
            writeln!(s, "{},{:.3}", e.epoch, e.wall_seconds).unwrap();
        }
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, text) in [("metrics.csv", self.to_csv()), ("timing.csv", self.timing_csv())] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, valid_error: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            train_cost: 1.0 / (epoch + 1) as f64,
            valid_error,
            test_error: valid_error + 0.01,
            learning_rate: 0.1,
            wall_seconds: 1.5,
        }
    }

    #[test]
    fn best_prefers_earliest_minimum() {
        let m = RunMetrics {
            epochs: vec![row(0, 0.3), row(1, 0.1), row(2, 0.2), row(3, 0.1)],
        };
        assert_eq!(m.best().unwrap().epoch, 1);
        assert!(RunMetrics::default().best().is_none());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = RunMetrics {
            epochs: vec![row(0, 0.25)],
        };
        let csv = m.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "epoch,train_cost,valid_error,test_error,learning_rate");
        assert_eq!(csv.lines().nth(1).unwrap(), "0,1.0,0.25,0.26,0.1");
        assert!(!csv.contains("wall"));
        assert!(m.timing_csv().contains("0,1.500"));
    }
}
