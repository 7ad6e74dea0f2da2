/// Reduce-on-plateau learning rate with early stopping, driven by one
/// validation loss per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub lr_floor: f64,
    pub factor: f64,
    pub patience: usize,
    pub stop_patience: usize,
    /// Required absolute decrease for an epoch to count as an improvement.
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    /// Epochs since the last improvement; drives early stopping.
    pub since_best: usize,
    /// Epochs since the last improvement or reduction; drives the reduction.
    pub since_change: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Decision {
    pub improved: bool,
    pub lr_reduced: bool,
    pub stop: bool,
}

impl PlateauSchedule {
    pub fn new(lr: f64, lr_floor: f64, factor: f64, patience: usize, stop_patience: usize, min_delta: f64) -> Self {
        Self {
            lr,
            lr_floor,
            factor,
            patience,
            stop_patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
            since_change: 0,
        }
    }

    /// Records the validation loss of `epoch` (1-based). The updated `lr`
    /// applies to the next epoch.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Decision {
        let mut d = Decision::default();
        if val_loss < self.best - self.min_delta || (self.best.is_infinite() && val_loss.is_finite()) {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            self.since_change = 0;
            d.improved = true;
            return d;
        }
        self.since_best += 1;
        self.since_change += 1;
        if self.since_change >= self.patience {
            self.since_change = 0;
            let next = (self.lr * self.factor).max(self.lr_floor);
            d.lr_reduced = next < self.lr;
            self.lr = next;
        }
        d.stop = self.since_best >= self.stop_patience;
        d
    }
}
