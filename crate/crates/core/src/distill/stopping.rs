//! Patience-based early stopping on a higher-is-better metric.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    /// Zero-based position of the best metric among those checked.
    pub best_index: Option<usize>,
    pub since_improvement: usize,
    pub checked: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: None,
            best_index: None,
            since_improvement: 0,
            checked: 0,
        }
    }

    /// Whether the most recent check set a new best.
    pub fn improved_last(&self) -> bool {
        self.checked > 0 && self.best_index == Some(self.checked - 1)
    }
}

/// Record `metric`: a strict improvement resets the counter, anything else
/// (ties included) increments it; stop once it reaches the patience.
pub fn early_stopping_check(state: &mut EarlyStopping, metric: f64) -> StopDecision {
    let index = state.checked;
    state.checked += 1;
    if state.best.is_none_or(|b| metric > b) {
        state.best = Some(metric);
        state.best_index = Some(index);
        state.since_improvement = 0;
    } else {
        state.since_improvement += 1;
    }
    if state.since_improvement >= state.patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}
