//! Plateau learning-rate schedule and the validation stopping rule.

use serde::{Deserialize, Serialize};

/// Reduce-on-plateau state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub patience: usize,
    pub factor: f64,
    pub min_delta: f64,
    pub best_val: f64,
    pub epochs_since_improve: usize,
    pub current_lr: f64,
}

impl SchedulerState {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self { patience, factor, min_delta: 0.0, best_val: f64::INFINITY, epochs_since_improve: 0, current_lr: lr }
    }

    /// Records one validation loss; cuts the rate once more than `patience` epochs pass
    /// without an improvement larger than `min_delta`. Returns true when the rate was cut.
    pub fn update(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best_val - self.min_delta {
            self.best_val = val_loss;
            self.epochs_since_improve = 0;
            return false;
        }
        self.epochs_since_improve += 1;
        if self.epochs_since_improve > self.patience {
            self.current_lr *= self.factor;
            self.epochs_since_improve = 0;
            return true;
        }
        false
    }
}

/// Pure form of [`SchedulerState::update`].
pub fn scheduler_update(state: &SchedulerState, val_loss: f64) -> SchedulerState {
    let mut s = state.clone();
    s.update(val_loss);
    s
}

/// True when the best validation loss of the last `window` epochs improves on the best before
/// them by no more than `delta`.
pub fn check_stop(val_history: &[f64], window: usize, delta: f64) -> bool {
    let window = window.max(1);
    if val_history.len() <= window {
        return false;
    }
    let split = val_history.len() - window;
    let before = val_history[..split].iter().copied().fold(f64::INFINITY, f64::min);
    let recent = val_history[split..].iter().copied().fold(f64::INFINITY, f64::min);
    before - recent <= delta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_losses_never_cut() {
        let mut s = SchedulerState::new(1e-3, 2, 0.5);
        for k in 0..100 {
            assert!(!s.update(1.0 / (k + 1) as f64));
        }
        assert_eq!(s.current_lr, 1e-3);
    }

    #[test]
    fn flat_losses_cut_on_fourth_epoch() {
        let mut s = SchedulerState::new(1.0, 2, 0.5);
        let cuts: Vec<bool> = [1.0, 1.0, 1.0, 1.0].iter().map(|&v| s.update(v)).collect();
        assert_eq!(cuts, vec![false, false, false, true]);
        assert_eq!(s.current_lr, 0.5);
        assert_eq!(s.epochs_since_improve, 0);
    }

    #[test]
    fn min_delta_threshold() {
        let mut s = SchedulerState::new(1.0, 5, 0.5);
        s.min_delta = 0.1;
        s.update(1.0);
        s.update(1.0 - 0.05);
        assert_eq!(s.epochs_since_improve, 1);
        assert_eq!(s.best_val, 1.0);
    }

    #[test]
    fn stop_rule() {
        let window = 100;
        let delta = 3e-3;
        assert!(!check_stop(&vec![1.0; 50], window, delta));
        assert!(check_stop(&vec![1.0; window + 1], window, delta));
        let mut h = vec![1.0; window + 1];
        h[60] = 1.0 - 2.0 * delta;
        assert!(!check_stop(&h, window, delta));
    }

    #[test]
    fn pure_update_matches() {
        let s = SchedulerState::new(1.0, 0, 0.5);
        let s1 = scheduler_update(&s, 2.0);
        let s2 = scheduler_update(&s1, 2.0);
        assert_eq!(s2.current_lr, 0.5);
    }
}
