use std::fmt;

use super::{train_on, Splits, TrainConfig};
use crate::error::{Error, Result};
use crate::optim::Method;

/// Test error at the best-validation epoch over several seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    pub test_errors: Vec<f64>,
}

impl RepeatSummary {
    pub fn mean(&self) -> f64 {
        self.test_errors.iter().sum::<f64>() / self.test_errors.len() as f64
    }

    /// Sample standard deviation; 0 for a single run.
    pub fn std(&self) -> f64 {
        let n = self.test_errors.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.test_errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

impl fmt::Display for RepeatSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "test error {:.2}% ± {:.2}% over {} runs",
            100.0 * self.mean(),
            100.0 * self.std(),
            self.test_errors.len()
        )
    }
}

/// Trains with seeds `config.seed`, `config.seed + 1`, … .
pub fn repeat(config: &TrainConfig, data: &Splits, repeats: usize) -> Result<RepeatSummary> {
    if repeats == 0 {
        return Err(Error::Argument("repeats must be at least 1".into()));
    }
    let mut out = RepeatSummary {
        seeds: Vec::new(),
        test_errors: Vec::new(),
    };
    for r in 0..repeats as u64 {
        let cfg = TrainConfig {
            seed: config.seed + r,
            ..config.clone()
        };
        let (ck, _) = train_on(cfg, data, &mut ())?;
        let best = ck.best.as_ref().expect("at least one epoch");
        out.seeds.push(config.seed + r);
        out.test_errors.push(best.test_error);
    }
    Ok(out)
}

/// Learning-rate endpoints `(method, η₀, η_T)` used for the desk-scale
/// optimizer ablation on the MNIST MLP. Each value works with scaling
/// switched either on or off.
pub const DESK_ABLATION_RATES: [(Method, f64, f64); 3] =
    [(Method::Sgd, 1.0, 0.01), (Method::Nesterov, 0.1, 0.001), (Method::Adam, 0.1, 0.01)];

/// One optimizer × learning-rate-scaling combination.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub method: Method,
    pub lr_scaling: bool,
    /// `None` if training diverged.
    pub best_valid_error: Option<f64>,
    pub test_error: Option<f64>,
    pub final_train_cost: Option<f64>,
    pub failure: Option<String>,
}

impl AblationCell {
    pub fn diverged(&self) -> bool {
        self.failure.is_some()
    }
}

/// Trains `config` once per optimizer, with and without per-layer
/// learning-rate scaling. Each optimizer starts from its own learning rate
/// in `rates`. A non-finite cost is recorded as a failed cell rather than
/// aborting the sweep.
pub fn ablation(config: &TrainConfig, data: &Splits, rates: &[(Method, f64, f64)]) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::new();
    for method in Method::ALL {
        let &(_, lr_start, lr_end) = rates
            .iter()
            .find(|(m, _, _)| *m == method)
            .ok_or_else(|| Error::Argument(format!("no learning rate given for {method}")))?;
        for lr_scaling in [false, true] {
            let cfg = TrainConfig {
                optimizer: method,
                lr_scaling,
                lr_start,
                lr_end,
                ..config.clone()
            };
            let cell = match train_on(cfg, data, &mut ()) {
                Ok((ck, m)) => {
                    let best = ck.best.as_ref().expect("at least one epoch");
                    AblationCell {
                        method,
                        lr_scaling,
                        best_valid_error: Some(best.valid_error),
                        test_error: Some(best.test_error),
                        final_train_cost: m.epochs.last().map(|e| e.train_cost),
                        failure: None,
                    }
                }
                Err(e @ Error::NonFinite { .. }) => AblationCell {
                    method,
                    lr_scaling,
                    best_valid_error: None,
                    test_error: None,
                    final_train_cost: None,
                    failure: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// Markdown table of the six cells.
pub fn ablation_table(cells: &[AblationCell]) -> String {
    let pct = |v: Option<f64>| v.map_or("diverged".to_string(), |e| format!("{:.2}%", 100.0 * e));
    let mut s = String::from("| optimizer | LR scaling | best valid error | test error | final train cost |\n");
    s.push_str("|---|---|---|---|---|\n");
    for c in cells {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            c.method,
            if c.lr_scaling { "yes" } else { "no" },
            pct(c.best_valid_error),
            pct(c.test_error),
            c.final_train_cost.map_or("-".to_string(), |v| format!("{v:.4}"))
        ));
    }
    s
}
