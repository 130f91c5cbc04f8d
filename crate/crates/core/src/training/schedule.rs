//! Learning-rate schedules: reduce-on-plateau (per epoch) and triangular
//! cyclic (per optimizer step).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Constant,
    Plateau {
        factor: f64,
        patience: usize,
        /// Relative improvement needed to reset the patience counter.
        threshold: f64,
        min_lr: f64,
    },
    Cyclic {
        lr_min: f64,
        lr_max: f64,
        step_size: u64,
    },
}

impl ScheduleSpec {
    pub fn plateau_default() -> Self {
        ScheduleSpec::Plateau {
            factor: 0.1,
            patience: 2,
            threshold: 1e-8,
            min_lr: 1e-8,
        }
    }

    pub fn cyclic_default() -> Self {
        ScheduleSpec::Cyclic {
            lr_min: 1e-5,
            lr_max: 1e-4,
            step_size: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScheduleSpec::Constant => Ok(()),
            ScheduleSpec::Plateau {
                factor,
                threshold,
                min_lr,
                ..
            } => {
                if factor > 0.0 && factor < 1.0 && threshold >= 0.0 && min_lr >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!("invalid plateau schedule {self:?}")))
                }
            }
            ScheduleSpec::Cyclic {
                lr_min,
                lr_max,
                step_size,
            } => {
                if lr_min > 0.0 && lr_min < lr_max && step_size > 0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!("invalid cyclic schedule {self:?}")))
                }
            }
        }
    }
}

/// Triangular cycle: `lr_min` at step 0, `lr_max` at `step_size`, period `2·step_size`.
pub fn cyclic_lr(step: u64, lr_min: f64, lr_max: f64, step_size: u64) -> f64 {
    let phase = step % (2 * step_size);
    let pos = phase as f64 / step_size as f64 - 1.0;
    lr_min + (lr_max - lr_min) * (1.0 - pos.abs()).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    pub best_loss: f64,
    pub bad_epochs: usize,
    pub current_lr: f64,
}

impl Plateau {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, threshold: f64, min_lr: f64) -> Self {
        Self {
            factor,
            patience,
            threshold,
            min_lr,
            best_loss: f64::INFINITY,
            bad_epochs: 0,
            current_lr: initial_lr,
        }
    }

    /// Feeds one epoch loss and returns the learning rate for the next epoch.
    pub fn step(&mut self, epoch_loss: f64) -> f64 {
        if epoch_loss < self.best_loss * (1.0 - self.threshold) {
            self.best_loss = epoch_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.current_lr = (self.current_lr * self.factor).max(self.min_lr);
            self.bad_epochs = 0;
        }
        self.current_lr
    }
}

/// Runtime state of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleState {
    Constant(f64),
    Plateau(Plateau),
    Cyclic { lr_min: f64, lr_max: f64, step_size: u64 },
}

impl ScheduleState {
    pub fn new(spec: &ScheduleSpec, initial_lr: f64) -> Self {
        match *spec {
            ScheduleSpec::Constant => ScheduleState::Constant(initial_lr),
            ScheduleSpec::Plateau {
                factor,
                patience,
                threshold,
                min_lr,
            } => ScheduleState::Plateau(Plateau::new(initial_lr, factor, patience, threshold, min_lr)),
            ScheduleSpec::Cyclic {
                lr_min,
                lr_max,
                step_size,
            } => ScheduleState::Cyclic {
                lr_min,
                lr_max,
                step_size,
            },
        }
    }

    /// Learning rate for optimizer step `step` (zero-based, counted over the whole phase).
    pub fn lr_for_step(&self, step: u64) -> f64 {
        match self {
            ScheduleState::Constant(lr) => *lr,
            ScheduleState::Plateau(p) => p.current_lr,
            ScheduleState::Cyclic {
                lr_min,
                lr_max,
                step_size,
            } => cyclic_lr(step, *lr_min, *lr_max, *step_size),
        }
    }

    pub fn end_epoch(&mut self, epoch_loss: f64) {
        if let ScheduleState::Plateau(p) = self {
            p.step(epoch_loss);
        }
    }
}
