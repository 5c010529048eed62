//! Validation-loss monitors: learning-rate reduction on plateau and early stopping.

/// Absolute tolerance: a loss counts as an improvement only if it is below
/// `best - MIN_DELTA`.
pub const MIN_DELTA: f64 = 1e-6;

/// Divides the learning rate by `factor` once the monitored loss has failed to
/// improve for more than `patience` consecutive epochs, then starts counting again.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Feed one epoch's loss; returns the (possibly reduced) learning rate.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best - MIN_DELTA {
            self.best = loss;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale > self.patience {
            self.stale = 0;
            lr / self.factor
        } else {
            lr
        }
    }
}

/// Signals a stop after `patience` consecutive epochs without improvement and
/// remembers the epoch of the best loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopSignal {
    /// This epoch is the new best.
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopSignal {
        if loss < self.best - MIN_DELTA {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return StopSignal::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopSignal::Stop
        } else {
            StopSignal::Continue
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_losses_never_reduce_or_stop() {
        let mut sched = PlateauScheduler::new(10.0, 10);
        let mut stop = EarlyStopping::new(25);
        let mut lr = 0.01;
        for epoch in 0..200 {
            let loss = 1.0 / (epoch as f64 + 1.0);
            lr = sched.observe(loss, lr);
            assert_eq!(stop.observe(epoch, loss), StopSignal::Improved);
        }
        assert_eq!(lr, 0.01);
    }

    #[test]
    fn flat_losses_reduce_after_patience_and_stop() {
        let mut sched = PlateauScheduler::new(10.0, 10);
        let mut stop = EarlyStopping::new(25);
        let mut lr = 0.01;
        let mut reductions = Vec::new();
        let mut stopped_at = None;
        for epoch in 0..100 {
            let new_lr = sched.observe(1.0, lr);
            if new_lr < lr {
                reductions.push(epoch);
            }
            lr = new_lr;
            if stop.observe(epoch, 1.0) == StopSignal::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        // Epoch 0 sets the best; epochs 1..=11 are stale, the 11th triggers.
        assert_eq!(reductions, vec![11, 22]);
        assert_eq!(stopped_at, Some(25));
        assert_eq!(stop.best(), Some((0, 1.0)));
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut stop = EarlyStopping::new(3);
        assert_eq!(stop.observe(0, 1.0), StopSignal::Improved);
        assert_eq!(stop.observe(1, 1.0 - 1e-7), StopSignal::Continue);
        assert_eq!(stop.observe(2, 0.5), StopSignal::Improved);
    }
}
