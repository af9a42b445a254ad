//! Reduce-on-plateau learning rate schedule.

pub const LR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    streak: usize,
}

impl PlateauScheduler {
    /// `patience` non-improving epochs halve the rate (with the default
    /// factor); the rate never drops below `LR_FLOOR`.
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler { lr, factor, patience: patience.max(1), best: f64::INFINITY, streak: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.streak = 0;
        } else {
            self.streak += 1;
            if self.streak >= self.patience {
                self.lr = (self.lr * self.factor).max(LR_FLOOR);
                self.streak = 0;
            }
        }
        self.lr
    }
}
