use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    CosineDecay,
}

/// Learning rate at `step` of `total_steps`. A zero-length run falls back to
/// the constant rate.
pub fn lr_at(schedule: Schedule, base_lr: f64, step: usize, total_steps: usize) -> f64 {
    match schedule {
        Schedule::Constant => base_lr,
        Schedule::CosineDecay if total_steps == 0 => base_lr,
        Schedule::CosineDecay => {
            let frac = step.min(total_steps) as f64 / total_steps as f64;
            base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(lr_at(Schedule::CosineDecay, 0.1, 0, 10), 0.1);
        assert!(lr_at(Schedule::CosineDecay, 0.1, 10, 10).abs() < 1e-18);
        assert!((lr_at(Schedule::CosineDecay, 0.1, 5, 10) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn constant_and_degenerate() {
        assert_eq!(lr_at(Schedule::Constant, 0.3, 7, 10), 0.3);
        assert_eq!(lr_at(Schedule::CosineDecay, 0.3, 0, 0), 0.3);
    }
}
