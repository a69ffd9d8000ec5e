use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, weight_decay: 0.1, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub end_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Input tokens per optimizer step; each batch holds
    /// `max(1, batch_tokens / len)` sequences.
    pub batch_tokens: usize,
    pub short_len: usize,
    pub long_len: usize,
    /// `(short, long)` batches per cycle.
    pub interleave_ratio: (usize, usize),
    pub seed: u64,
    pub optimizer: AdamW,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 7e-3,
            end_lr: 3.5e-4,
            warmup_steps: 100,
            total_steps: 1000,
            batch_tokens: 1024,
            short_len: 256,
            long_len: 1024,
            interleave_ratio: (3, 1),
            seed: 0,
            optimizer: AdamW::default(),
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr.is_finite() && self.end_lr.is_finite() && self.end_lr >= 0.0) {
            return Err(invalid("learning rates must be finite and non-negative"));
        }
        if self.end_lr > self.peak_lr {
            return Err(invalid(format!("end_lr {} exceeds peak_lr {}", self.end_lr, self.peak_lr)));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(invalid(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_tokens == 0 {
            return Err(invalid("batch_tokens must be ≥ 1"));
        }
        let (s, l) = self.interleave_ratio;
        if s + l == 0 {
            return Err(invalid("interleave ratio has zero total"));
        }
        if (s > 0 && self.short_len < 2) || (l > 0 && self.long_len < 2) {
            return Err(invalid("sequence lengths in use must be ≥ 2"));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 || o.weight_decay < 0.0 {
            return Err(invalid("AdamW needs betas in [0, 1), eps > 0 and weight_decay ≥ 0"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(invalid("grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to `end_lr` at
/// `total_steps`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(invalid(format!("step {step} beyond total_steps {}", cfg.total_steps)));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.peak_lr * step as f64 / cfg.warmup_steps as f64);
    }
    let span = (cfg.total_steps - cfg.warmup_steps).max(1) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    Ok(cfg.end_lr + (cfg.peak_lr - cfg.end_lr) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn production_like() -> TrainConfig {
        TrainConfig { warmup_steps: 2000, total_steps: 10_000, ..Default::default() }
    }

    #[test]
    fn schedule_landmarks() {
        let c = production_like();
        assert_eq!(lr_schedule(0, &c).unwrap(), 0.0);
        assert!((lr_schedule(2000, &c).unwrap() - 7e-3).abs() < 1e-15);
        assert!((lr_schedule(10_000, &c).unwrap() - 3.5e-4).abs() < 1e-15);
        assert!((lr_schedule(6000, &c).unwrap() - (7e-3 + 3.5e-4) / 2.0).abs() < 1e-15);
        assert!(lr_schedule(10_001, &c).is_err());
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let c = production_like();
        let left = c.peak_lr * (c.warmup_steps as f64 - 1e-9) / c.warmup_steps as f64;
        assert!((lr_schedule(c.warmup_steps, &c).unwrap() - left).abs() < 1e-12);
        let just_after = lr_schedule(c.warmup_steps + 1, &c).unwrap();
        assert!((c.peak_lr - just_after).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { end_lr: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { warmup_steps: 1000, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { interleave_ratio: (0, 0), ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn non_increasing_after_warmup(warm in 0usize..50, extra in 1usize..500, peak in 1e-4f64..1e-1, frac in 0.0f64..1.0) {
            let c = TrainConfig { warmup_steps: warm, total_steps: warm + extra, peak_lr: peak, end_lr: peak * frac, ..Default::default() };
            let mut prev = f64::INFINITY;
            for s in warm..=c.total_steps {
                let lr = lr_schedule(s, &c).unwrap();
                prop_assert!(lr <= prev + 1e-15);
                prop_assert!(lr >= c.end_lr - 1e-15);
                prev = lr;
            }
        }
    }
}
