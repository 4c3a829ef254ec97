//! Reduce-on-plateau learning rate schedule.

/// Cuts the learning rate by `factor` once the monitored validation loss has
/// failed to improve for more than `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    best: f64,
    bad_epochs: u32,
    pub factor: f64,
    pub patience: u32,
    pub min_lr: f64,
}

/// Improvement must beat the best seen loss by this margin.
const IMPROVE_EPS: f64 = 1e-8;

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: u32, min_lr: f64) -> Self {
        assert!(factor > 0.0 && factor < 1.0, "factor must be in (0,1)");
        assert!(min_lr > 0.0 && initial_lr >= min_lr, "need lr >= min_lr > 0");
        Self { lr: initial_lr, best: f64::INFINITY, bad_epochs: 0, factor, patience, min_lr }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Observe one epoch's validation loss; returns the (possibly reduced) lr.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - IMPROVE_EPS {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_losses_keep_lr() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 5, 1e-7);
        for k in 0..50 {
            s.step(1.0 / (k + 1) as f64);
        }
        assert_eq!(s.lr(), 1e-3);
    }

    #[test]
    fn six_flat_epochs_halve_once_at_patience_five() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 5, 1e-7);
        s.step(1.0);
        for _ in 0..5 {
            s.step(1.0);
            assert_eq!(s.lr(), 1e-3);
        }
        s.step(1.0); // sixth non-improving epoch
        assert_eq!(s.lr(), 5e-4);
        s.step(1.0);
        assert_eq!(s.lr(), 5e-4);
    }

    #[test]
    fn lr_floors_at_min() {
        let mut s = PlateauScheduler::new(4e-7, 0.5, 0, 1e-7);
        s.step(1.0);
        for _ in 0..20 {
            s.step(1.0);
        }
        assert_eq!(s.lr(), 1e-7);
    }

    #[test]
    fn lr_is_non_increasing() {
        let mut s = PlateauScheduler::new(1e-2, 0.3, 2, 1e-8);
        let mut prev = s.lr();
        let losses = [5.0, 4.0, 4.0, 4.0, 4.0, 3.0, 3.0, 3.0, 3.0, 2.0, 2.0, 2.0];
        for l in losses {
            let lr = s.step(l);
            assert!(lr <= prev && lr >= 1e-8);
            prev = lr;
        }
    }
}
