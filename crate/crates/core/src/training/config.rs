use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scenario;

/// Hyperparameters of the two-phase per-task procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub center_epochs: usize,
    pub radii_epochs: usize,
    pub batch_size: usize,
    pub lr_center: f64,
    pub lr_radii: f64,
    pub acc_thresh: f64,
    pub initial_radius: f64,
    /// Batches averaged before the stopping rule is consulted.
    pub running_window: usize,
    pub nu_reset: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::mnist(Scenario::IncrementalTask)
    }
}

impl TrainConfig {
    /// Split-MNIST settings for each scenario.
    pub fn mnist(scenario: Scenario) -> Self {
        let (acc_thresh, lr_center, lr_radii) = match scenario {
            Scenario::IncrementalTask => (0.9, 1.0, 100.0),
            Scenario::IncrementalDomain => (0.8, 1.0, 1000.0),
            Scenario::IncrementalClass => (0.8, 0.001, 1.0),
        };
        Self {
            center_epochs: 15,
            radii_epochs: 15,
            batch_size: 128,
            lr_center,
            lr_radii,
            acc_thresh,
            initial_radius: 1.0,
            running_window: 10,
            nu_reset: 5.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.running_window == 0 {
            return fail("running_window must be positive");
        }
        if !(self.lr_center.is_finite() && self.lr_center > 0.0) {
            return fail("lr_center must be positive");
        }
        if !(self.lr_radii.is_finite() && self.lr_radii > 0.0) {
            return fail("lr_radii must be positive");
        }
        if !(0.0..=1.0).contains(&self.acc_thresh) {
            return fail("acc_thresh must lie in [0, 1]");
        }
        if !(self.initial_radius.is_finite() && self.initial_radius > 0.0) {
            return fail("initial_radius must be positive");
        }
        if !self.nu_reset.is_finite() {
            return fail("nu_reset must be finite");
        }
        Ok(())
    }
}

/// Paired per-batch accuracy and guaranteed accuracy over a fixed window.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    window: usize,
    entries: VecDeque<(f64, f64)>,
}

impl RunningStats {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "window must be positive");
        Self {
            window,
            entries: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, acc: f64, guaranteed_acc: f64) {
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back((acc, guaranteed_acc));
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.window
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// `(mean acc, mean guaranteed acc)`, defined only once the window is full.
    pub fn means(&self) -> Option<(f64, f64)> {
        if !self.is_full() {
            return None;
        }
        let n = self.window as f64;
        let (a, g) = self.entries.iter().fold((0.0, 0.0), |(a, g), &(x, y)| (a + x, g + y));
        Some((a / n, g / n))
    }

    /// Whether the window is full and its guaranteed accuracy has reached
    /// `thresh` times its accuracy.
    pub fn threshold_reached(&self, thresh: f64) -> bool {
        self.means().is_some_and(|(acc, wc)| wc >= acc * thresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_the_hyperparameter_table() {
        let it = TrainConfig::mnist(Scenario::IncrementalTask);
        assert_eq!(
            (it.acc_thresh, it.lr_center, it.lr_radii, it.initial_radius),
            (0.9, 1.0, 100.0, 1.0)
        );
        let id = TrainConfig::mnist(Scenario::IncrementalDomain);
        assert_eq!(
            (id.acc_thresh, id.lr_center, id.lr_radii, id.initial_radius),
            (0.8, 1.0, 1000.0, 1.0)
        );
        let ic = TrainConfig::mnist(Scenario::IncrementalClass);
        assert_eq!(
            (ic.acc_thresh, ic.lr_center, ic.lr_radii, ic.initial_radius),
            (0.8, 0.001, 1.0, 1.0)
        );
        assert_eq!(it.nu_reset, 5.0);
        assert_eq!(it.center_epochs + it.radii_epochs, 30);
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.acc_thresh = 1.5;
        assert!(c.validate().is_err());
        c.acc_thresh = 0.5;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn window_means_need_a_full_window() {
        let mut s = RunningStats::new(3);
        s.push(1.0, 0.0);
        s.push(1.0, 1.0);
        assert_eq!(s.means(), None);
        assert!(!s.threshold_reached(0.0));
        s.push(1.0, 1.0);
        let (a, g) = s.means().unwrap();
        assert_eq!(a, 1.0);
        assert!((g - 2.0 / 3.0).abs() < 1e-15);
        s.push(0.5, 0.5);
        assert_eq!(s.means(), Some((2.5 / 3.0, 2.5 / 3.0)));
        assert!(s.threshold_reached(1.0));
    }
}
