//! Linear-warmup, half-cycle-cosine learning-rate schedule.

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, total_epochs: usize) -> Result<Self, NumericsError> {
        if base_lr <= 0.0 || total_epochs <= warmup_epochs {
            return Err(NumericsError::Invalid {
                op: "lr_schedule",
                msg: format!(
                    "base_lr {base_lr} must be positive and total {total_epochs} must exceed warmup {warmup_epochs}"
                ),
            });
        }
        Ok(LrSchedule { base_lr, warmup_epochs, total_epochs })
    }

    /// Learning rate at a (possibly fractional) epoch in `[0, total]`:
    /// linear ramp from 0 to base over the warmup, then
    /// `base * 0.5 * (1 + cos(pi * (e - w) / (T - w)))`.
    pub fn lr_at(&self, epoch: f64) -> Result<f64, NumericsError> {
        if !(0.0..=self.total_epochs as f64).contains(&epoch) {
            return Err(NumericsError::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        let w = self.warmup_epochs as f64;
        let t = self.total_epochs as f64;
        if epoch < w {
            return Ok(self.base_lr * epoch / w);
        }
        let progress = (epoch - w) / (t - w);
        Ok(self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> LrSchedule {
        LrSchedule::new(1e-3, 5, 50).unwrap()
    }

    #[test]
    fn warmup_end_hits_base_lr() {
        assert_eq!(sched().lr_at(5.0).unwrap(), 1e-3);
    }

    #[test]
    fn cosine_midpoint_is_half_base() {
        assert!((sched().lr_at(27.5).unwrap() - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn final_epoch_decays_to_zero() {
        assert!(sched().lr_at(50.0).unwrap().abs() < 1e-18);
    }

    #[test]
    fn warmup_ramps_linearly_from_zero() {
        let s = sched();
        assert_eq!(s.lr_at(0.0).unwrap(), 0.0);
        assert!((s.lr_at(2.5).unwrap() - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn lr_nonnegative_everywhere() {
        let s = sched();
        for i in 0..=500 {
            let e = i as f64 * 0.1;
            assert!(s.lr_at(e).unwrap() >= 0.0);
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(sched().lr_at(-0.1).is_err());
        assert!(sched().lr_at(50.1).is_err());
    }

    #[test]
    fn degenerate_construction_rejected() {
        assert!(LrSchedule::new(1e-3, 5, 5).is_err());
        assert!(LrSchedule::new(0.0, 0, 10).is_err());
    }
}
