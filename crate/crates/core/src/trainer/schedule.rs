use std::f64::consts::PI;

/// Cosine annealing from `base_lr` to zero over `total_steps`, no warmup or restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        Self { base_lr, total_steps }
    }

    /// Learning rate for zero-based step `s`.
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.base_lr * 0.5 * (1.0 + (PI * frac).cos())
    }
}
