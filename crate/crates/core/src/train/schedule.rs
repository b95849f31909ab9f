use serde::{Deserialize, Serialize};

/// When the learning rate is cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrMode {
    /// Cut only if the best validation accuracy did not improve during the
    /// window that just ended.
    #[default]
    Plateau,
    /// Cut at every window boundary.
    Unconditional,
}

/// Step-wise decay `lr_k = max(lr_initial * factor^k, lr_final)` where `k`
/// counts the cuts so far. Cuts are only considered at epochs that are
/// multiples of `window`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrScheduler {
    lr_initial: f64,
    lr_final: f64,
    factor: f64,
    window: usize,
    mode: LrMode,
    reductions: u32,
    best: f64,
    best_at_window_start: f64,
}

impl LrScheduler {
    /// `baseline` is the validation accuracy before the first epoch; the
    /// first window must beat it to count as improving.
    pub fn new(lr_initial: f64, lr_final: f64, factor: f64, window: usize, mode: LrMode, baseline: f64) -> Self {
        Self {
            lr_initial,
            lr_final,
            factor,
            window,
            mode,
            reductions: 0,
            best: baseline,
            best_at_window_start: baseline,
        }
    }

    pub fn lr(&self) -> f64 {
        (self.lr_initial * self.factor.powi(self.reductions as i32)).max(self.lr_final)
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }

    /// Records the validation accuracy of 1-based `epoch` and returns the
    /// learning rate for the next epoch.
    pub fn end_epoch(&mut self, epoch: usize, val_accuracy: f64) -> f64 {
        if val_accuracy > self.best {
            self.best = val_accuracy;
        }
        if self.window > 0 && epoch > 0 && epoch % self.window == 0 {
            let improved = self.best > self.best_at_window_start;
            let cut = match self.mode {
                LrMode::Plateau => !improved,
                LrMode::Unconditional => true,
            };
            // once clamped, further cuts change nothing
            if cut && self.lr() > self.lr_final {
                self.reductions += 1;
            }
            self.best_at_window_start = self.best;
        }
        self.lr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_schedule(mode: LrMode) -> LrScheduler {
        LrScheduler::new(1e-3, 1e-4, 2f64.powf(-1.0 / 3.0), 100, mode, 0.5)
    }

    #[test]
    fn plateau_closed_form() {
        let mut s = full_schedule(LrMode::Plateau);
        let mut lrs = vec![s.lr()];
        for epoch in 1..=1200 {
            let lr = s.end_epoch(epoch, 0.5);
            if epoch % 100 == 0 {
                lrs.push(lr);
            }
        }
        for (k, lr) in lrs.iter().enumerate().take(10) {
            let expected = 1e-3 * 2f64.powf(-(k as f64) / 3.0);
            assert!((lr - expected).abs() <= 1e-15, "k={k}: {lr} vs {expected}");
        }
        assert!((lrs[9] - 1.25e-4).abs() < 1e-16);
        assert_eq!(lrs[10], 1e-4);
        assert_eq!(lrs[12], 1e-4);
    }

    #[test]
    fn improvement_keeps_rate() {
        let mut s = full_schedule(LrMode::Plateau);
        for epoch in 1..=100 {
            s.end_epoch(epoch, if epoch == 80 { 0.6 } else { 0.5 });
        }
        assert_eq!(s.lr(), 1e-3);
        // no further gain: the next boundary cuts
        for epoch in 101..=200 {
            s.end_epoch(epoch, 0.55);
        }
        assert!(s.lr() < 1e-3);
    }

    #[test]
    fn off_boundary_epochs_do_nothing() {
        let mut s = full_schedule(LrMode::Plateau);
        assert_eq!(s.end_epoch(50, 0.0), 1e-3);
        let mut u = full_schedule(LrMode::Unconditional);
        for epoch in 1..=100 {
            u.end_epoch(epoch, epoch as f64);
        }
        assert_eq!(u.reductions(), 1);
    }
}
