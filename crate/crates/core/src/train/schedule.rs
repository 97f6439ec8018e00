//! Learning-rate schedule: linear warmup to the base rate over the first
//! fraction of training, then linear decay to zero.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Schedule {
    pub total_steps: usize,
    pub warmup_frac: f64,
}

impl Schedule {
    pub fn new(total_steps: usize, warmup_frac: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&warmup_frac),
            "warmup fraction must be in [0, 1)"
        );
        Schedule {
            total_steps,
            warmup_frac,
        }
    }

    pub fn warmup_steps(&self) -> usize {
        ((self.total_steps as f64) * self.warmup_frac).round() as usize
    }
}

/// Learning rate at a step in `[0, total]`; steps beyond total clamp to 0.
pub fn lr_at(step: usize, sched: &Schedule, base_lr: f64) -> f64 {
    let warmup = sched.warmup_steps();
    let total = sched.total_steps;
    if step >= total {
        return 0.0;
    }
    if warmup > 0 && step <= warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    base_lr * (total - step) as f64 / (total - warmup) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_peak() {
        let s = Schedule::new(1000, 0.1);
        assert_eq!(lr_at(0, &s, 1e-4), 0.0);
        assert!((lr_at(100, &s, 1e-4) - 1e-4).abs() < 1e-18);
        assert_eq!(lr_at(1000, &s, 1e-4), 0.0);
        assert_eq!(lr_at(5000, &s, 1e-4), 0.0);
    }

    #[test]
    fn decay_is_the_line_through_peak_and_zero() {
        let s = Schedule::new(1000, 0.1);
        let lr = lr_at(550, &s, 1e-4);
        assert!((lr - 1e-4 * 450.0 / 900.0).abs() < 1e-18);
        assert!((lr - 5.0e-5).abs() < 1e-18);
    }

    #[test]
    fn piecewise_linear_continuous_and_peaked_at_warmup() {
        let s = Schedule::new(200, 0.1);
        let base = 3e-4;
        let mut max = 0.0f64;
        let mut prev = lr_at(0, &s, base);
        for step in 1..=200 {
            let lr = lr_at(step, &s, base);
            // continuity: adjacent steps differ by at most one linear slope
            let slope_w = base / s.warmup_steps() as f64;
            let slope_d = base / (s.total_steps - s.warmup_steps()) as f64;
            assert!((lr - prev).abs() <= slope_w.max(slope_d) + 1e-18);
            max = max.max(lr);
            prev = lr;
        }
        assert!((max - base).abs() < 1e-18);
    }
}
