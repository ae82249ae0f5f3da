use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, KlDirection};

/// How labeled and unlabeled sentences are combined into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MixStrategy {
    /// Shuffle one pool holding every sentence, so batch composition
    /// follows the pool proportions.
    #[default]
    Pool,
    /// Fill each batch with a fixed fraction of labeled sentences.
    FixedRatio,
}

/// Objective weights and optimisation settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub task_weight: f64,
    pub distill_weight: f64,
    /// Multiply the divergence term by `T²`.
    pub scale_by_t2: bool,
    pub kl_direction: KlDirection,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    pub mix: MixStrategy,
    /// Labeled share of each batch under [`MixStrategy::FixedRatio`].
    pub labeled_fraction: f64,
    /// Batch size used when scoring the dev set.
    pub eval_batch_size: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            task_weight: 1.0,
            distill_weight: 1.0,
            scale_by_t2: true,
            kl_direction: KlDirection::StudentTeacher,
            epochs: 20,
            batch_size: 32,
            lr: 0.001,
            dropout: 0.5,
            seed: 0,
            mix: MixStrategy::Pool,
            labeled_fraction: 0.5,
            eval_batch_size: 64,
        }
    }
}

impl DistillConfig {
    /// Settings for supervised training without a teacher.
    pub fn baseline() -> Self {
        Self {
            distill_weight: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.task_weight >= 0.0 && self.distill_weight >= 0.0) {
            return fail("loss weights must be non-negative".into());
        }
        if self.task_weight == 0.0 && self.distill_weight == 0.0 {
            return fail("task_weight and distill_weight cannot both be zero".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return fail("epochs and batch sizes must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return fail(format!(
                "labeled_fraction must be in [0, 1], got {}",
                self.labeled_fraction
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Multiplier applied to the raw divergence.
    pub fn distill_scale(&self) -> f64 {
        if self.scale_by_t2 {
            self.temperature * self.temperature
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = DistillConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr, c.dropout), (20, 32, 0.001, 0.5));
        assert_eq!(c.temperature, 2.0);
        assert_eq!(c.distill_scale(), 4.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_zero_weights() {
        let c = DistillConfig {
            task_weight: 0.0,
            distill_weight: 0.0,
            ..DistillConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = DistillConfig {
            temperature: 0.0,
            ..DistillConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_partial() {
        let c: DistillConfig = toml::from_str("temperature = 3.0\nkl_direction = \"teacher-student\"").unwrap();
        assert_eq!(c.temperature, 3.0);
        assert_eq!(c.kl_direction, KlDirection::TeacherStudent);
        assert_eq!(c.epochs, 20);
    }
}
